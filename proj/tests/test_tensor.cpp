#include "doctest.h"

#include <cmath>

#include "support/gradcheck.hpp"
#include "umg/ops.hpp"
#include "umg/optim.hpp"
#include "umg/rng.hpp"
#include "umg/tensor.hpp"

using namespace umg;
using umg::test::finite_diff_check;
using umg::test::random_values;

namespace {
// Random projection so gradient checks exercise non-uniform output weights.
Tensor scalar_weights(uint64_t seed) {
    return Tensor({2, 4, 6, 6}, random_values(2 * 4 * 6 * 6, seed + 777));
}
}  // namespace

TEST_CASE("tensor shape/data invariant") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<real>{1, 2}), DimError);
    Tensor t({2, 3}, std::vector<real>(6, 1));
    CHECK(t.numel() == 6);
    CHECK_FALSE(t.on_tape());
}

TEST_CASE("constant tensors never allocate tape entries") {
    Tape tape;
    Tensor a({2, 2}, std::vector<real>{1, 2, 3, 4});
    Tensor b({2, 2}, std::vector<real>{5, 6, 7, 8});
    Tensor c = add(a, b);
    CHECK_FALSE(c.on_tape());
    CHECK(tape.node_count() == 0);
}

TEST_CASE("backward: sum of squares") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, std::vector<real>{1, 2}));
    Tensor loss = sum_all(mul(x, x));
    auto gm = tape.backward(loss);
    auto& g = gm.at(x.node);
    CHECK(g[0] == doctest::Approx(2));
    CHECK(g[1] == doctest::Approx(4));
}

TEST_CASE("backward: two uses of one tensor sum their gradients") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, std::vector<real>{3, -1}));
    // y = x + x => dy/dx = 2 per element
    Tensor loss = sum_all(add(x, x));
    auto gm = tape.backward(loss);
    for (real v : gm.at(x.node)) CHECK(v == doctest::Approx(2));
}

TEST_CASE("backward: dual-consumer DAG equals sum of single-path gradients") {
    auto run = [](bool use_a, bool use_b) {
        Tape tape;
        Tensor x = tape.leaf(Tensor({3}, std::vector<real>{0.5, -0.25, 2}));
        Tensor branch_a = mul(x, x);
        Tensor branch_b = mul_scalar(x, 3);
        Tensor loss;
        if (use_a && use_b)
            loss = sum_all(add(branch_a, branch_b));
        else if (use_a)
            loss = sum_all(branch_a);
        else
            loss = sum_all(branch_b);
        auto gm = tape.backward(loss);
        return gm.at(x.node);
    };
    auto both = run(true, true);
    auto only_a = run(true, false);
    auto only_b = run(false, true);
    for (size_t i = 0; i < both.size(); ++i) {
        CHECK(both[i] == doctest::Approx(only_a[i] + only_b[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward: non-scalar loss rejected, disconnected leaf gets zeros") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, std::vector<real>{1, 2}));
    Tensor unused = tape.leaf(Tensor({3}, std::vector<real>{1, 2, 3}));
    Tensor vec = mul(x, x);
    CHECK_THROWS_AS((void)tape.backward(vec), DimError);

    Tape tape2;
    Tensor y = tape2.leaf(Tensor({2}, std::vector<real>{1, 2}));
    Tensor z = tape2.leaf(Tensor({2}, std::vector<real>{4, 5}));
    auto gm = tape2.backward(sum_all(mul(y, y)));
    for (real v : gm.at(z.node)) CHECK(v == 0);
}

TEST_CASE("conv2d: identity kernel") {
    Tensor in({1, 1, 3, 3}, std::vector<real>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({1, 1, 1, 1}, std::vector<real>{1});
    Tensor out = conv2d(in, k, 1, Padding::none());
    CHECK(out.shape == std::vector<int>{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(in.data()[i]));
}

TEST_CASE("conv2d: hand-worked 2x2 kernel") {
    // brute-force cross-correlation oracle worked by hand:
    // [[1,2,3],[4,5,6],[7,8,9]] (*) [[1,0],[0,1]] -> [[1+5, 2+6], [4+8, 5+9]]
    Tensor in({1, 1, 3, 3}, std::vector<real>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({1, 1, 2, 2}, std::vector<real>{1, 0, 0, 1});
    Tensor out = conv2d(in, k, 1, Padding::none());
    CHECK(out.shape == std::vector<int>{1, 1, 2, 2});
    CHECK(out.data()[0] == doctest::Approx(6));
    CHECK(out.data()[1] == doctest::Approx(8));
    CHECK(out.data()[2] == doctest::Approx(12));
    CHECK(out.data()[3] == doctest::Approx(14));
}

TEST_CASE("conv2d: shape errors") {
    Tensor in({1, 2, 4, 4}, std::vector<real>(32, 0));
    Tensor k({1, 3, 3, 3}, std::vector<real>(27, 0));
    CHECK_THROWS_AS(conv2d(in, k, 1, Padding::none()), DimError);
    Tensor big_k({1, 2, 5, 5}, std::vector<real>(50, 0));
    CHECK_THROWS_AS(conv2d(in, big_k, 1, Padding::none()), DimError);
}

TEST_CASE("conv2d gradient vs finite differences") {
    for (uint64_t seed : {7ULL, 8ULL, 9ULL}) {
        auto xv = random_values(2 * 3 * 8 * 8, seed);
        auto kv = random_values(4 * 3 * 3 * 3, seed + 100);

        Tape tape;
        Tensor x = tape.leaf(Tensor({2, 3, 8, 8}, xv));
        Tensor k = tape.leaf(Tensor({4, 3, 3, 3}, kv));
        Tensor loss = sum_all(mul(conv2d(x, k, 1, Padding::none()), scalar_weights(seed)));
        auto gm = tape.backward(loss);

        auto fwd_x = [&](const std::vector<real>& v) {
            Tensor xx({2, 3, 8, 8}, v);
            Tensor kk({4, 3, 3, 3}, kv);
            return sum_all(mul(conv2d(xx, kk, 1, Padding::none()), scalar_weights(seed))).scalar();
        };
        auto rx = finite_diff_check(xv, fwd_x, gm.at(x.node));
        CHECK(rx.max_rel_err < kGradCheckTol);

        auto fwd_k = [&](const std::vector<real>& v) {
            Tensor xx({2, 3, 8, 8}, xv);
            Tensor kk({4, 3, 3, 3}, v);
            return sum_all(mul(conv2d(xx, kk, 1, Padding::none()), scalar_weights(seed))).scalar();
        };
        auto rk = finite_diff_check(kv, fwd_k, gm.at(k.node));
        CHECK(rk.max_rel_err < kGradCheckTol);
    }
}

TEST_CASE("pool/upsample basics") {
    Tensor x({1, 1, 2, 2}, std::vector<real>{1, 2, 3, 4});
    Tensor p = pool_max2(x);
    CHECK(p.numel() == 1);
    CHECK(p.data()[0] == 4);

    Tensor y({1, 1, 1, 1}, std::vector<real>{5});
    Tensor u = upsample_nearest2(y);
    CHECK(u.shape == std::vector<int>{1, 1, 2, 2});
    for (real v : u.data()) CHECK(v == 5);

    Tensor odd({1, 1, 3, 4}, std::vector<real>(12, 0));
    CHECK_THROWS_AS(pool_max2(odd), DimError);
}

TEST_CASE("pool ties route gradient to first row-major argmax") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({1, 1, 2, 2}, std::vector<real>{7, 7, 7, 7}));
    auto gm = tape.backward(sum_all(pool_max2(x)));
    auto& g = gm.at(x.node);
    CHECK(g[0] == 1);
    CHECK(g[1] == 0);
    CHECK(g[2] == 0);
    CHECK(g[3] == 0);
}

TEST_CASE("activation basics") {
    Tensor x({3}, std::vector<real>{-1, 0, 2});
    Tensor r = relu(x);
    CHECK(r.data() == std::vector<real>{0, 0, 2});
    CHECK(sigmoid(Tensor({1}, std::vector<real>{0})).scalar() == doctest::Approx(0.5));
    CHECK_THROWS_AS(log_op(Tensor({1}, std::vector<real>{0})), NumericError);
    CHECK_THROWS_AS(log_op(Tensor({1}, std::vector<real>{-2})), NumericError);
}

TEST_CASE("channel_stats: constant channel and two-point channel") {
    Tensor x({1, 1, 2, 2}, std::vector<real>(4, 5));
    auto [m, s] = channel_stats(x, real(1e-5));
    CHECK(m.data()[0] == doctest::Approx(5));
    CHECK(s.data()[0] == doctest::Approx(std::sqrt(1e-5)));

    Tensor y({1, 1, 1, 2}, std::vector<real>{0, 2});
    auto [m2, s2] = channel_stats(y, real(1e-12));
    CHECK(m2.data()[0] == doctest::Approx(1));
    CHECK(s2.data()[0] == doctest::Approx(1).epsilon(1e-6));
}

TEST_CASE("channel_stats: normalize then invert reconstructs input") {
    SeededRng rng(21);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<real> vals(2 * 3 * 4 * 4);
        for (auto& v : vals) v = static_cast<real>(rng.uniform(-2, 2));
        Tensor x({2, 3, 4, 4}, vals);
        real eps = real(1e-5);
        auto [m, s] = channel_stats(x, eps);
        Tensor ones({2, 3}, real(1));
        Tensor inv_s = div(ones, s);
        Tensor neg_ms = mul_scalar(mul(m, inv_s), -1);
        Tensor normed = affine_channels(x, inv_s, neg_ms);
        Tensor back = affine_channels(normed, s, m);
        for (size_t i = 0; i < vals.size(); ++i) {
            CHECK(back.data()[i] == doctest::Approx(vals[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("affine_channels basics") {
    Tensor x({1, 1, 1, 2}, std::vector<real>{0, 2});
    Tensor scale({1, 1}, std::vector<real>{2});
    Tensor shift({1, 1}, std::vector<real>{10});
    Tensor out = affine_channels(x, scale, shift);
    CHECK(out.data()[0] == 10);
    CHECK(out.data()[1] == 14);

    Tensor id_scale({1, 1}, std::vector<real>{1});
    Tensor id_shift({1, 1}, std::vector<real>{0});
    Tensor same = affine_channels(x, id_scale, id_shift);
    CHECK(same.data() == x.data());

    Tensor bad({2, 1}, std::vector<real>{1, 1});
    CHECK_THROWS_AS(affine_channels(x, bad, id_shift), DimError);
}

TEST_CASE("l2_distance basics") {
    Tensor a({2}, std::vector<real>{3, 0});
    Tensor b({2}, std::vector<real>{0, 4});
    CHECK(l2_distance(a, b).scalar() == doctest::Approx(5));
    CHECK(l2_distance(a, a).scalar() == doctest::Approx(0).epsilon(1e-6));
    Tensor c({3}, std::vector<real>{1, 2, 3});
    CHECK_THROWS_AS(l2_distance(a, c), DimError);
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
    Tensor w({2}, std::vector<real>{1.5, -2});
    auto before = w.data();
    auto opt = OptimizerState::make_adam(real(0.1));
    for (int i = 0; i < 3; ++i) {
        optimizer_step(opt, {&w}, {std::vector<real>(2, 0)});
    }
    CHECK(w.data() == before);
    CHECK(opt.step == 3);
}

TEST_CASE("adam: first step moves scalar by ~lr (hand-evaluated update)") {
    // m_hat = 1, v_hat = 1 => delta = lr / (1 + eps)
    Tensor w({1}, std::vector<real>{0});
    auto opt = OptimizerState::make_adam(real(0.1));
    optimizer_step(opt, {&w}, {std::vector<real>{1}});
    CHECK(w.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: converges on quadratic") {
    // scripted reference: minimize (w-3)^2 from w=0, lr 0.12, 100 steps -> |w-3| ~ 2.9e-3
    Tensor w({1}, std::vector<real>{0});
    auto opt = OptimizerState::make_adam(real(0.12));
    for (int i = 0; i < 100; ++i) {
        real g = 2 * (w.data()[0] - 3);
        optimizer_step(opt, {&w}, {std::vector<real>{g}});
    }
    CHECK(std::abs(w.data()[0] - 3) < 1e-2);
}

TEST_CASE("rmsprop: converges on quadratic and rejects bad shapes") {
    Tensor w({1}, std::vector<real>{0});
    auto opt = OptimizerState::make_rmsprop(real(0.05));
    for (int i = 0; i < 200; ++i) {
        real g = 2 * (w.data()[0] - 3);
        optimizer_step(opt, {&w}, {std::vector<real>{g}});
    }
    CHECK(std::abs(w.data()[0] - 3) < 1e-2);
    CHECK_THROWS_AS(optimizer_step(opt, {&w}, {std::vector<real>{1, 2}}), DimError);
}

TEST_CASE("optimizer determinism: identical seeds give bitwise-identical params") {
    auto run = [](uint64_t seed) {
        SeededRng rng(seed);
        Tensor w({8}, random_values(8, seed));
        auto opt = OptimizerState::make_adam(real(0.01));
        for (int step = 0; step < 50; ++step) {
            std::vector<real> g(8);
            for (auto& v : g) v = static_cast<real>(rng.uniform(-1, 1));
            optimizer_step(opt, {&w}, {g});
        }
        return w.data();
    };
    auto a = run(5), b = run(5);
    CHECK(a == b);  // bitwise
}
