#include <cmath>
#include <vector>

#include "doctest.h"
#include "multimix/rng.hpp"
#include "multimix/tape.hpp"
#include "multimix/tensor.hpp"

using namespace multimix;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// keeps values away from activation kinks so central differences are clean
template <typename T>
Tensor<T> random_nonkink(Shape shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = rng.uniform(0.05, 1.0);
        if (rng.bernoulli(0.5)) v = -v;
        t[i] = static_cast<T>(v);
    }
    return t;
}

}  // namespace

TEST_CASE("d(sum(x))/dx is ones") {
    Rng rng(1);
    TapeD tape;
    auto x = tape.leaf(random_tensor<double>({3, 4}, rng));
    auto s = tape.sum(x);
    tape.backward(s);
    for (int64_t i = 0; i < 12; ++i) CHECK(tape.grad(x)[i] == 1.0);
}

TEST_CASE("d(x*x)/dx = 2x for scalar x") {
    TapeD tape;
    auto x = tape.leaf(Tensor<double>({1}, {1.7}));
    auto y = tape.mul(x, x);
    tape.backward(tape.sum(y));
    CHECK(tape.grad(x)[0] == doctest::Approx(3.4));
}

TEST_CASE("gradients accumulate over all use sites") {
    TapeD tape;
    auto x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}));
    auto y = tape.add(x, x);
    auto z = tape.add(y, x);  // z = 3x
    tape.backward(tape.sum(z));
    CHECK(tape.grad(x)[0] == 3.0);
    CHECK(tape.grad(x)[1] == 3.0);
}

TEST_CASE("backward rejects non-scalar and detached roots") {
    TapeD tape;
    auto x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
    auto c = tape.constant(Tensor<double>({1}, {5.0}));
    CHECK_THROWS_AS(tape.backward(c), ShapeError);
}

TEST_CASE("finite_diff_check on smooth closed forms") {
    Rng rng(2);
    CHECK(finite_diff_check([](TapeD& t, TapeD::Var x) { return t.sum(x); },
                            random_tensor<double>({5}, rng), 1e-4) < 1e-10);
    CHECK(finite_diff_check([](TapeD& t, TapeD::Var x) { return t.sum(t.leaky_relu(x)); },
                            random_nonkink<double>({8}, rng), 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check through conv + instance_norm chain") {
    Rng rng(3);
    const auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    // random linear probe: keeps the scalar's gradient O(1) so the relative
    // error is meaningful (sum of squares of a normalized output is nearly
    // constant and only exposes the eps term)
    const auto probe = random_tensor<double>({1, 3, 6, 6}, rng);
    const double err = finite_diff_check(
        [&](TapeD& t, TapeD::Var x) {
            auto y = t.instance_norm(t.conv2d(x, t.constant(w), t.constant(b)));
            return t.sum(t.mul(y, t.constant(probe)));
        },
        random_tensor<double>({1, 2, 6, 6}, rng), 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("per-op analytic gradients agree with central differences") {
    Rng rng(4);
    const double tol = 1e-5;

    SUBCASE("conv2d w.r.t. input") {
        const auto w = random_tensor<double>({2, 3, 3, 3}, rng);
        const auto b = random_tensor<double>({2}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var x) {
                      auto y = t.conv2d(x, t.constant(w), t.constant(b));
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({1, 3, 5, 5}, rng), 1e-5) < tol);
    }
    SUBCASE("conv2d w.r.t. weight and bias") {
        const auto x = random_tensor<double>({2, 3, 4, 4}, rng);
        const auto b = random_tensor<double>({2}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var w) {
                      auto y = t.conv2d(t.constant(x), w, t.constant(b));
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({2, 3, 3, 3}, rng), 1e-5) < tol);
        const auto w = random_tensor<double>({2, 3, 3, 3}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var bias) {
                      auto y = t.conv2d(t.constant(x), t.constant(w), bias);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({2}, rng), 1e-5) < tol);
    }
    SUBCASE("conv2d_1x1") {
        const auto w = random_tensor<double>({1, 6, 1, 1}, rng);
        const auto b = random_tensor<double>({1}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var x) {
                      auto y = t.conv2d(x, t.constant(w), t.constant(b));
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({1, 6, 4, 4}, rng), 1e-5) < tol);
    }
    SUBCASE("instance_norm") {
        const auto probe = random_tensor<double>({2, 2, 4, 4}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var x) {
                      auto y = t.instance_norm(x);
                      return t.sum(t.mul(y, t.constant(probe)));
                  },
                  random_tensor<double>({2, 2, 4, 4}, rng), 1e-5) < tol);
    }
    SUBCASE("maxpool2 at non-tie points") {
        // distinct magnitudes ensure no window ties
        Tensor<double> x({1, 1, 4, 4});
        for (int64_t i = 0; i < 16; ++i) x[i] = 0.1 * static_cast<double>(i) + 0.7;
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      auto y = t.maxpool2(x);
                      return t.sum(t.mul(y, y));
                  },
                  x, 1e-6) < tol);
    }
    SUBCASE("avgpool2 and avgpool_global") {
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      auto y = t.avgpool2(x);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({1, 2, 4, 4}, rng), 1e-5) < tol);
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      auto y = t.avgpool_global(x);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({2, 3, 4, 4}, rng), 1e-5) < tol);
    }
    SUBCASE("upsample_nearest2") {
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      auto y = t.upsample_nearest2(x);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({1, 2, 3, 3}, rng), 1e-5) < tol);
    }
    SUBCASE("linear all arguments") {
        const auto x = random_tensor<double>({3, 4}, rng);
        const auto w = random_tensor<double>({2, 4}, rng);
        const auto b = random_tensor<double>({2}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var xx) {
                      auto y = t.linear(xx, t.constant(w), t.constant(b));
                      return t.sum(t.mul(y, y));
                  },
                  x, 1e-5) < tol);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var ww) {
                      auto y = t.linear(t.constant(x), ww, t.constant(b));
                      return t.sum(t.mul(y, y));
                  },
                  w, 1e-5) < tol);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var bb) {
                      auto y = t.linear(t.constant(x), t.constant(w), bb);
                      return t.sum(t.mul(y, y));
                  },
                  b, 1e-5) < tol);
    }
    SUBCASE("softmax") {
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      auto y = t.softmax(x);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({4, 2}, rng), 1e-5) < tol);
    }
    SUBCASE("sigmoid") {
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      auto y = t.sigmoid(x);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({3, 3}, rng), 1e-5) < tol);
    }
    SUBCASE("concat_channels") {
        const auto other = random_tensor<double>({1, 2, 3, 3}, rng);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var x) {
                      auto y = t.concat_channels({x, t.constant(other)});
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({1, 3, 3, 3}, rng), 1e-5) < tol);
    }
    SUBCASE("gather_rows") {
        const std::vector<int> idx = {1, 0, 1};
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var x) {
                      auto y = t.gather_rows(x, idx);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({3, 2}, rng), 1e-5) < tol);
    }
    SUBCASE("cross_entropy") {
        const std::vector<int> labels = {0, 1, 1, 0};
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var logits) {
                      return t.cross_entropy(logits, labels, nullptr);
                  },
                  random_tensor<double>({4, 2}, rng), 1e-5) < tol);
        const std::vector<uint8_t> mask = {1, 0, 1, 0};
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var logits) {
                      return t.cross_entropy(logits, labels, &mask);
                  },
                  random_tensor<double>({4, 2}, rng), 1e-5) < tol);
    }
    SUBCASE("dice_loss") {
        Tensor<double> target({2, 1, 3, 3});
        Rng trng(5);
        for (int64_t i = 0; i < target.numel(); ++i) target[i] = trng.bernoulli(0.5) ? 1.0 : 0.0;
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var pred) { return t.dice_loss(t.sigmoid(pred), target); },
                  random_tensor<double>({2, 1, 3, 3}, rng), 1e-5) < tol);
    }
    SUBCASE("kl_consistency") {
        Tensor<double> target({2, 1, 3, 3});
        Rng trng(6);
        for (int64_t i = 0; i < target.numel(); ++i) target[i] = trng.uniform(0.1, 0.9);
        CHECK(finite_diff_check(
                  [&](TapeD& t, TapeD::Var pred) {
                      return t.kl_consistency(target, t.sigmoid(pred));
                  },
                  random_tensor<double>({2, 1, 3, 3}, rng), 1e-5) < tol);
    }
    SUBCASE("dropout with frozen mask") {
        CHECK(finite_diff_check(
                  [](TapeD& t, TapeD::Var x) {
                      Rng rng(77);  // same mask at every evaluation
                      auto y = t.dropout(x, 0.25, Mode::train, rng);
                      return t.sum(t.mul(y, y));
                  },
                  random_tensor<double>({4, 4}, rng), 1e-5) < tol);
    }
}

TEST_CASE("checkpointed values roundtrip bitwise through tape storage") {
    Rng rng(15);
    const auto xv = random_tensor<float>({2, 3, 4, 4}, rng);
    TapeF tape;
    auto x = tape.constant(xv);
    CHECK(tape.value(x).vec() == xv.vec());
}
