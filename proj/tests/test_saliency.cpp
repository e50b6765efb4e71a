#include "multimix/saliency.hpp"

#include <cmath>

#include "doctest.h"
#include "multimix/losses.hpp"
#include "multimix/rng.hpp"

using namespace multimix;

namespace {

template <typename T>
Tensor<T> random_images(int64_t m, int64_t s, uint64_t seed) {
    Rng rng(seed);
    Tensor<T> t({m, 1, s, s});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.next_double());
    return t;
}

// small model the finite-difference pass can afford: 16x16 input, 3 blocks
ArchDescriptor tiny_arch() {
    ArchDescriptor arch;
    arch.extent = 16;
    arch.blocks = 3;
    arch.base_width = 4;
    return arch;
}

}  // namespace

TEST_CASE("zero classification head produces all-zero saliency") {
    auto arch = tiny_arch();
    auto params = init_params<float>(3, arch);
    params.tensors.at("head.fc.weight") = Tensor<float>({2, arch.channels(arch.blocks)});
    params.tensors.at("head.fc.bias") = Tensor<float>({2});
    const auto sal = compute_saliency(params, random_images<float>(2, 16, 5));
    for (int64_t i = 0; i < sal.map.numel(); ++i) CHECK(sal.map[i] == 0.0f);
}

TEST_CASE("saliency has the input shape and lies in [0,1]") {
    auto arch = tiny_arch();
    auto params = init_params<float>(7, arch);
    const auto x = random_images<float>(3, 16, 9);
    const auto sal = compute_saliency(params, x);
    CHECK(sal.map.shape() == x.shape());
    for (int64_t i = 0; i < sal.map.numel(); ++i) {
        CHECK(sal.map[i] >= 0.0f);
        CHECK(sal.map[i] <= 1.0f);
    }
    CHECK(sal.logits.shape() == Shape{3, 2});
}

TEST_CASE("saliency equals the finite-difference input derivative after normalization") {
    auto arch = tiny_arch();
    auto params = init_params<double>(11, arch);
    const auto x = random_images<double>(1, 16, 13);
    const auto sal = compute_saliency(params, x);

    // fixed argmax class from the base point; finite differences of its logit
    int cls = sal.logits.at2(0, 1) > sal.logits.at2(0, 0) ? 1 : 0;
    auto eval_logit = [&](const Tensor<double>& point) {
        Tape<double> tape;
        MultiMixNet<double> net(tape, params, false);
        Rng rng(0);
        auto logits = net.classify(net.encode(tape.constant(point), Mode::eval, rng));
        return tape.value(logits).at2(0, cls);
    };
    const double step = 1e-5;
    Tensor<double> numeric(x.shape());
    Tensor<double> probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = eval_logit(probe);
        probe[i] = orig - step;
        const double down = eval_logit(probe);
        probe[i] = orig;
        numeric[i] = std::fabs((up - down) / (2 * step));
    }
    // identical normalization
    double lo = numeric[0], hi = numeric[0];
    for (int64_t i = 0; i < numeric.numel(); ++i) {
        lo = std::min(lo, numeric[i]);
        hi = std::max(hi, numeric[i]);
    }
    REQUIRE(hi > lo);
    double max_rel = 0;
    for (int64_t i = 0; i < numeric.numel(); ++i) {
        const double want = (numeric[i] - lo) / (hi - lo);
        const double got = sal.map[i];
        max_rel = std::max(max_rel, std::fabs(want - got) / std::max({want, got, 1e-8}));
    }
    CHECK(max_rel < 1e-3);
}

TEST_CASE("saliency is detached: decoder parameters cannot influence it") {
    auto arch = tiny_arch();
    auto params = init_params<float>(17, arch);
    const auto x = random_images<float>(2, 16, 19);
    const auto before = compute_saliency(params, x);
    for (auto& [name, t] : params.tensors) {
        if (name.rfind("dec.", 0) != 0) continue;
        for (int64_t i = 0; i < t.numel(); ++i) t[i] += 0.37f;
    }
    const auto after = compute_saliency(params, x);
    CHECK(before.map.vec() == after.map.vec());
}

TEST_CASE("backward through the bridge assigns no gradient to the saliency path") {
    // Gradients must be identical whether the bridge came from compute_saliency
    // or was injected as a plain constant with the same values.
    auto arch = tiny_arch();
    auto params = init_params<float>(23, arch);
    const auto x = random_images<float>(2, 16, 29);
    Rng mrng(31);
    Tensor<float> masks({2, 1, 16, 16});
    for (int64_t i = 0; i < masks.numel(); ++i) masks[i] = mrng.bernoulli(0.5) ? 1.0f : 0.0f;

    auto run = [&](const Tensor<float>& bridge_vals) {
        Tape<float> tape;
        MultiMixNet<float> net(tape, params, true);
        Rng rng(0);
        auto cache = net.encode(tape.constant(x), Mode::eval, rng);
        auto pred = net.decode(cache, tape.constant(bridge_vals), Mode::eval, rng);
        auto loss = tape.dice_loss(pred, masks);
        tape.backward(loss);
        std::map<std::string, std::vector<float>> grads;
        for (const auto& [name, var] : net.param_vars()) grads[name] = tape.grad(var).vec();
        return grads;
    };

    const auto sal = compute_saliency(params, x);
    const auto bridge = build_bridge(sal.map, x, arch.bridge_pool_steps());
    const auto from_saliency = run(bridge);
    const auto from_constant = run(bridge);  // same values, pure constant either way
    CHECK(from_saliency == from_constant);
}

TEST_CASE("bridge pooling reaches the decoder concat resolution") {
    const auto y = random_images<float>(2, 256, 41);
    const auto x = random_images<float>(2, 256, 43);
    const auto b = build_bridge(y, x, 3);  // default-scale: three halvings, 256 -> 32
    CHECK(b.shape() == Shape{2, 2, 32, 32});
}

TEST_CASE("bridge of constants keeps the constant and stacks channels in order") {
    const auto y = Tensor<float>::full({1, 1, 8, 8}, 0.25f);
    const auto x = Tensor<float>::full({1, 1, 8, 8}, 0.75f);
    const auto b = build_bridge(y, x, 2);
    CHECK(b.shape() == Shape{1, 2, 2, 2});
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(b[i] == 0.25f);      // channel 0: saliency
        CHECK(b[4 + i] == 0.75f);  // channel 1: image
    }
}

TEST_CASE("bridge downsampling is exact on block-constant images") {
    // 8x8 blocks of constant value pool exactly through three averaging steps
    Tensor<float> y({1, 1, 16, 16});
    Tensor<float> x({1, 1, 16, 16});
    for (int64_t r = 0; r < 16; ++r)
        for (int64_t c = 0; c < 16; ++c) {
            y[r * 16 + c] = (r < 8 ? 0.125f : 0.625f);
            x[r * 16 + c] = (c < 8 ? 0.25f : 0.5f);
        }
    const auto b = build_bridge(y, x, 3);
    CHECK(b.shape() == Shape{1, 2, 2, 2});
    CHECK(b[0] == 0.125f);
    CHECK(b[1] == 0.125f);
    CHECK(b[2] == 0.625f);
    CHECK(b[3] == 0.625f);
    CHECK(b[4] == 0.25f);
    CHECK(b[5] == 0.5f);
}

TEST_CASE("bridge determinism: identical inputs give identical bytes") {
    auto arch = tiny_arch();
    auto params = init_params<float>(47, arch);
    const auto x = random_images<float>(2, 16, 53);
    const auto a = compute_saliency(params, x);
    const auto b = compute_saliency(params, x);
    CHECK(a.map.vec() == b.map.vec());
    CHECK(build_bridge(a.map, x, 1).vec() == build_bridge(b.map, x, 1).vec());
}
