#pragma once

#include <vector>

#include "umg/networks.hpp"
#include "umg/ops.hpp"

namespace umg {

struct StyleLossConfig {
    std::vector<int> tap_indices{0, 1, 2, 3};
    real lambda_c = real(0.001);
    real lambda_s = real(0.002);
    real alpha = real(0.5);
    real prob_clamp = real(1e-7);  // log-argument clamp epsilon
    real stat_eps = real(1e-5);    // sigma stabilizer in channel statistics
    bool non_saturating = false;   // -log D(G(t)) generator variant, off by default

    void validate() const;
};

/// Aligns x's per-(sample,channel) spatial statistics to y's:
/// out = sigma(y) * (x - mu(x)) / sigma(x) + mu(y). Spatial sizes may differ;
/// sample and channel counts must match.
Tensor adain(const Tensor& x, const Tensor& y, real epsilon);

/// t = AdaIN(f(c), f(s)) at the encoder's deepest tap.
Tensor encode_stylized_target(const Tensor& content_img, const Tensor& style_img,
                              const EncoderSpec& enc, real epsilon);

/// (1-alpha) * f_c + alpha * t. Endpoints return the input tensor unchanged.
Tensor interpolate_features(const Tensor& f_c, const Tensor& t, real alpha);

/// Sum over taps of per-sample L2 distances between channel means and between
/// channel stds, batch-meaned. Taps come pre-encoded.
Tensor style_loss_from_taps(const std::vector<Tensor>& synth_taps,
                            const std::vector<Tensor>& style_taps, const StyleLossConfig& cfg);

/// Encodes both images and applies style_loss_from_taps at cfg.tap_indices.
Tensor style_loss(const Tensor& synth_img, const Tensor& style_img, const EncoderSpec& enc,
                  const StyleLossConfig& cfg);

/// Per-sample L2 between re-encoded features and the decoder input, batch-meaned.
Tensor content_loss_from_feats(const Tensor& f_synth, const Tensor& t);
Tensor content_loss(const Tensor& synth_img, const Tensor& t, const EncoderSpec& enc);

/// mean(log(1 - D(G(t)))), saturating; or -mean(log D(G(t))) when
/// cfg.non_saturating. Probabilities are clamped to [eps_p, 1-eps_p].
Tensor gen_adv_loss(const Tensor& d_on_fake, const StyleLossConfig& cfg);

/// mean(log D(x)) + mean(log(1 - D(G(t)))); the discriminator maximizes this.
Tensor disc_adv_loss(const Tensor& d_on_real, const Tensor& d_on_fake,
                     const StyleLossConfig& cfg);

/// lambda_c * L_c + lambda_s * L_s + L_adv_G (minimized by the generator).
Tensor generator_objective(const Tensor& l_c, const Tensor& l_s, const Tensor& l_adv_g,
                           const StyleLossConfig& cfg);

/// The discriminator objective is the adversarial term itself; callers negate
/// it when feeding a minimizing optimizer.
Tensor discriminator_objective(const Tensor& l_adv_d);

}  // namespace umg
