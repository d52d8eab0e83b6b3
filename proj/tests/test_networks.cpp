#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "support/gradcheck.hpp"
#include "umg/networks.hpp"
#include "umg/optim.hpp"
#include "umg/rng.hpp"
#include "umg/style.hpp"

using namespace umg;
using umg::test::random_values;

namespace {

Tensor random_img(int n, int hw, uint64_t seed) {
    return Tensor({n, 1, hw, hw}, random_values(static_cast<size_t>(n) * hw * hw, seed, 0, 1));
}

}  // namespace

TEST_CASE("builders: same seed gives bitwise-identical weights") {
    EncoderSpec e1 = build_encoder(42), e2 = build_encoder(42);
    for (int i = 0; i < 4; ++i) {
        CHECK(e1.blocks[i].w.data() == e2.blocks[i].w.data());
    }
    DetectorSpec d1 = build_detector(42), d2 = build_detector(42);
    CHECK(d1.fc_w.data() == d2.fc_w.data());
    DiscriminatorSpec q1 = build_discriminator(13), q2 = build_discriminator(13);
    CHECK(q1.convs[0].w.data() == q2.convs[0].w.data());
    EncoderSpec e3 = build_encoder(43);
    CHECK(e1.blocks[0].w.data() != e3.blocks[0].w.data());
}

TEST_CASE("encoder taps: shapes halve per block") {
    EncoderSpec enc = build_encoder(1);
    Tensor img = random_img(1, 96, 2);
    auto taps = encode_with_taps(enc, img);
    CHECK(taps[0].shape == std::vector<int>{1, 16, 96, 96});
    CHECK(taps[1].shape == std::vector<int>{1, 32, 48, 48});
    CHECK(taps[2].shape == std::vector<int>{1, 64, 24, 24});
    CHECK(taps[3].shape == std::vector<int>{1, 128, 12, 12});

    CHECK_THROWS_AS(encode_with_taps(enc, random_img(1, 20, 3)), DimError);
}

TEST_CASE("encoder: deterministic and finite on constant input") {
    EncoderSpec enc = build_encoder(5);
    Tensor zeros({1, 1, 32, 32}, real(0));
    auto t1 = encode_with_taps(enc, zeros);
    auto t2 = encode_with_taps(enc, zeros);
    for (int i = 0; i < 4; ++i) CHECK(t1[i].data() == t2[i].data());
}

TEST_CASE("decoder inverts encoder shapes at 96 and 64") {
    EncoderSpec enc = build_encoder(7);
    DecoderSpec dec = build_decoder(enc, 8);
    for (int hw : {96, 64}) {
        Tensor img = random_img(2, hw, 11);
        Tensor f = encode_deepest(enc, img);
        Tensor back = decode(dec, f);
        CHECK(back.shape == img.shape);
    }
}

TEST_CASE("decode output stays in [0,1] for random features") {
    DecoderSpec dec = build_decoder(build_encoder(1), 2);
    Tensor feats({2, 128, 4, 4},
                 random_values(2 * 128 * 16, 77, -4, 4));
    Tensor img = decode(dec, feats);
    for (real v : img.data()) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }
}

TEST_CASE("discriminator output is a probability") {
    DiscriminatorSpec disc = build_discriminator(3);
    Tensor img = random_img(4, 96, 21);
    Tensor p = discriminate(disc, img);
    CHECK(p.shape == std::vector<int>{4, 1});
    for (real v : p.data()) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }
}

TEST_CASE("detector softmax pair sums to 1 on 100 random patches") {
    DetectorSpec det = build_detector(4);
    Tensor patches = random_img(100, 96, 31);
    Tensor probs = detector_forward(det, patches);
    CHECK(probs.shape == std::vector<int>{100, 2});
    for (int n = 0; n < 100; ++n) {
        real s = probs.data()[2 * n] + probs.data()[2 * n + 1];
        CHECK(s == doctest::Approx(1).epsilon(1e-6));
        CHECK(probs.data()[2 * n + 1] >= 0);
        CHECK(probs.data()[2 * n + 1] <= 1);
    }
}

TEST_CASE("frozen encoder: no gradients, unchanged by a training step") {
    EncoderSpec enc = build_encoder(17);
    DecoderSpec dec = build_decoder(enc, 18);
    const real norm_before = l2_norm_of_params(encoder_weights(enc));

    StyleLossConfig cfg;
    Tensor content = random_img(2, 32, 41);
    Tensor style = random_img(2, 32, 42);
    auto opt = OptimizerState::make_adam(real(1e-3));
    for (int step = 0; step < 2; ++step) {
        Tape tape;
        DecoderSpec bdec = dec.bound(tape);
        size_t tape_nodes_after_leafs = tape.node_count();
        Tensor fc = encode_deepest(enc, content);
        // frozen contract: encoding constants must not grow the tape
        CHECK(tape.node_count() == tape_nodes_after_leafs);
        Tensor t = adain(fc, encode_deepest(enc, style), cfg.stat_eps);
        Tensor synth = decode(bdec, interpolate_features(fc, t, cfg.alpha));
        Tensor loss = add(mul_scalar(content_loss(synth, t, enc), cfg.lambda_c),
                          mul_scalar(style_loss(synth, style, enc, cfg), cfg.lambda_s));
        auto gm = tape.backward(loss);
        auto grads = grads_for(gm, {bdec.convs[0].w, bdec.convs[0].b, bdec.convs[1].w,
                                    bdec.convs[1].b, bdec.convs[2].w, bdec.convs[2].b,
                                    bdec.convs[3].w, bdec.convs[3].b});
        optimizer_step(opt, dec.parameters(), grads);
    }
    CHECK(l2_norm_of_params(encoder_weights(enc)) == norm_before);  // bitwise
}

TEST_CASE("discriminator weight gradient passes a finite-difference spot check") {
    DiscriminatorSpec disc = build_discriminator(23);
    // small input and a small step keep the check away from leaky-relu kinks
    Tensor img = random_img(1, 8, 61);

    Tape tape;
    DiscriminatorSpec b = disc.bound(tape);
    Tensor loss = mean_all(discriminate(b, img));
    auto gm = tape.backward(loss);
    auto g_fcw = gm.at(b.fc_w.node);

    auto fwd = [&](const std::vector<real>& v) {
        DiscriminatorSpec d2 = disc;
        d2.fc_w = Tensor({64, 1}, v);
        return mean_all(discriminate(d2, img)).scalar();
    };
    auto r = umg::test::finite_diff_check(disc.fc_w.data(), fwd, g_fcw, 1e-6);
    CHECK(r.max_rel_err < 1e-3);

    // spot-check one conv weight slice too
    auto g_w0 = gm.at(b.convs[0].w.node);
    auto fwd_w = [&](const std::vector<real>& v) {
        DiscriminatorSpec d2 = disc;
        d2.convs[0].w = Tensor(disc.convs[0].w.shape, v);
        return mean_all(discriminate(d2, img)).scalar();
    };
    auto rw = umg::test::finite_diff_check(disc.convs[0].w.data(), fwd_w, g_w0, 1e-6);
    CHECK(rw.max_rel_err < 1e-3);
}

TEST_CASE("end-to-end shape closure holds for all alpha") {
    EncoderSpec enc = build_encoder(31);
    DecoderSpec dec = build_decoder(enc, 32);
    Tensor c = random_img(1, 96, 71);
    Tensor s = random_img(1, 96, 72);
    Tensor fc = encode_deepest(enc, c);
    Tensor t = adain(fc, encode_deepest(enc, s), real(1e-5));
    for (real alpha : {real(0), real(0.25), real(0.5), real(1)}) {
        Tensor img = decode(dec, interpolate_features(fc, t, alpha));
        CHECK(img.shape == c.shape);
        for (real v : img.data()) {
            CHECK(v >= 0);
            CHECK(v <= 1);
        }
    }
}

TEST_CASE("checkpoint: round trip preserves names, shapes, f32 values") {
    DetectorSpec det = build_detector(77);
    const std::string path = "test_ckpt_det.umgw";
    save_checkpoint(path, named_params(det, "det"));
    auto loaded = load_checkpoint(path);
    auto m = to_map(loaded);
    DetectorSpec det2 = build_detector(1);
    assign_params(det2, m, "det");
    auto p1 = det.parameters(), p2 = det2.parameters();
    for (size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i]->shape == p2[i]->shape);
        for (size_t j = 0; j < p1[i]->data().size(); ++j) {
            CHECK(static_cast<float>(p1[i]->data()[j]) ==
                  static_cast<float>(p2[i]->data()[j]));
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint: bad magic and missing file raise IoError") {
    CHECK_THROWS_AS(load_checkpoint("definitely_missing.umgw"), IoError);
    const std::string path = "test_ckpt_bad.umgw";
    {
        FILE* f = fopen(path.c_str(), "wb");
        fputs("NOPE", f);
        fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(build_encoder(1, EncoderMode::desk_pretrained, "missing_enc.umgw"), IoError);
}
