#include "umg/style.hpp"

namespace umg {

void StyleLossConfig::validate() const {
    if (!(alpha >= 0 && alpha <= 1)) throw ValueError("StyleLossConfig: alpha outside [0,1]");
    if (!(lambda_c > 0) || !(lambda_s > 0)) {
        throw ValueError("StyleLossConfig: lambda_c and lambda_s must be positive");
    }
    if (!(prob_clamp > 0 && prob_clamp < real(0.5))) {
        throw ValueError("StyleLossConfig: prob_clamp outside (0, 0.5)");
    }
    if (tap_indices.empty()) throw ValueError("StyleLossConfig: empty tap list");
    for (int i : tap_indices) {
        if (i < 0 || i > 3) throw ValueError("StyleLossConfig: tap index out of range");
    }
}

Tensor adain(const Tensor& x, const Tensor& y, real epsilon) {
    if (x.ndim() != 4 || y.ndim() != 4) throw DimError("adain: expected NCHW inputs");
    if (x.dim(0) != y.dim(0) || x.dim(1) != y.dim(1)) {
        throw DimError("adain: sample/channel mismatch " + shape_str(x.shape) + " vs " +
                       shape_str(y.shape));
    }
    auto [mx, sx] = channel_stats(x, epsilon);
    auto [my, sy] = channel_stats(y, epsilon);
    Tensor ones({x.dim(0), x.dim(1)}, real(1));
    Tensor inv_sx = div(ones, sx);
    Tensor neg = mul_scalar(mul(mx, inv_sx), -1);
    Tensor normalized = affine_channels(x, inv_sx, neg);
    return affine_channels(normalized, sy, my);
}

Tensor encode_stylized_target(const Tensor& content_img, const Tensor& style_img,
                              const EncoderSpec& enc, real epsilon) {
    Tensor fc = encode_deepest(enc, content_img);
    Tensor fs = encode_deepest(enc, style_img);
    return adain(fc, fs, epsilon);
}

Tensor interpolate_features(const Tensor& f_c, const Tensor& t, real alpha) {
    if (!same_shape(f_c, t)) {
        throw DimError("interpolate_features: shape mismatch " + shape_str(f_c.shape) + " vs " +
                       shape_str(t.shape));
    }
    if (!(alpha >= 0 && alpha <= 1)) throw ValueError("interpolate_features: alpha outside [0,1]");
    if (alpha == 0) return f_c;
    if (alpha == 1) return t;
    return add(mul_scalar(f_c, 1 - alpha), mul_scalar(t, alpha));
}

Tensor style_loss_from_taps(const std::vector<Tensor>& synth_taps,
                            const std::vector<Tensor>& style_taps, const StyleLossConfig& cfg) {
    if (synth_taps.empty() || synth_taps.size() != style_taps.size()) {
        throw ValueError("style_loss: empty or mismatched tap lists");
    }
    Tensor total;
    for (size_t i = 0; i < synth_taps.size(); ++i) {
        auto [m_g, s_g] = channel_stats(synth_taps[i], cfg.stat_eps);
        auto [m_s, s_s] = channel_stats(style_taps[i], cfg.stat_eps);
        Tensor term = add(mean_all(l2_rows_distance(m_g, m_s)),
                          mean_all(l2_rows_distance(s_g, s_s)));
        total = i == 0 ? term : add(total, term);
    }
    return total;
}

Tensor style_loss(const Tensor& synth_img, const Tensor& style_img, const EncoderSpec& enc,
                  const StyleLossConfig& cfg) {
    cfg.validate();
    auto g_taps = encode_with_taps(enc, synth_img);
    auto s_taps = encode_with_taps(enc, style_img);
    std::vector<Tensor> gs, ss;
    for (int i : cfg.tap_indices) {
        gs.push_back(g_taps[static_cast<size_t>(i)]);
        ss.push_back(s_taps[static_cast<size_t>(i)]);
    }
    return style_loss_from_taps(gs, ss, cfg);
}

Tensor content_loss_from_feats(const Tensor& f_synth, const Tensor& t) {
    if (!same_shape(f_synth, t)) {
        throw DimError("content_loss: feature shape mismatch " + shape_str(f_synth.shape) +
                       " vs " + shape_str(t.shape));
    }
    return mean_all(l2_rows_distance(flatten2(f_synth), flatten2(t)));
}

Tensor content_loss(const Tensor& synth_img, const Tensor& t, const EncoderSpec& enc) {
    return content_loss_from_feats(encode_deepest(enc, synth_img), t);
}

namespace {

void require_probabilities(const Tensor& p, const char* who) {
    for (real v : p.data()) {
        if (!(v >= 0 && v <= 1)) {
            throw NumericError(std::string(who) + ": probability outside [0,1]");
        }
    }
}

Tensor one_minus(const Tensor& p) { return add_scalar(mul_scalar(p, -1), 1); }

}  // namespace

Tensor gen_adv_loss(const Tensor& d_on_fake, const StyleLossConfig& cfg) {
    require_probabilities(d_on_fake, "gen_adv_loss");
    Tensor p = clamp(d_on_fake, cfg.prob_clamp, 1 - cfg.prob_clamp);
    if (cfg.non_saturating) {
        return mul_scalar(mean_all(log_op(p)), -1);
    }
    return mean_all(log_op(one_minus(p)));
}

Tensor disc_adv_loss(const Tensor& d_on_real, const Tensor& d_on_fake,
                     const StyleLossConfig& cfg) {
    require_probabilities(d_on_real, "disc_adv_loss");
    require_probabilities(d_on_fake, "disc_adv_loss");
    Tensor pr = clamp(d_on_real, cfg.prob_clamp, 1 - cfg.prob_clamp);
    Tensor pf = clamp(d_on_fake, cfg.prob_clamp, 1 - cfg.prob_clamp);
    return add(mean_all(log_op(pr)), mean_all(log_op(one_minus(pf))));
}

Tensor generator_objective(const Tensor& l_c, const Tensor& l_s, const Tensor& l_adv_g,
                           const StyleLossConfig& cfg) {
    return add(add(mul_scalar(l_c, cfg.lambda_c), mul_scalar(l_s, cfg.lambda_s)), l_adv_g);
}

Tensor discriminator_objective(const Tensor& l_adv_d) { return l_adv_d; }

}  // namespace umg
