// Compares the serial reference kernels against the OpenMP/SIMD kernels and
// times a full model forward+backward step at the desk-scale configuration.
//
//   ./bench_kernels [reps]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "multimix/kernels.hpp"
#include "multimix/losses.hpp"
#include "multimix/model.hpp"
#include "multimix/rng.hpp"
#include "multimix/saliency.hpp"

using namespace multimix;
using kernels::ConvDims;

namespace {

template <typename F>
double time_ms(F&& f, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

Tensor<float> random_tensor(Shape shape, Rng& rng) {
    Tensor<float> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

void bench_conv(const ConvDims& d, int reps) {
    Rng rng(1);
    const auto x = random_tensor({d.n, d.cin, d.h, d.w}, rng);
    const auto w = random_tensor({d.cout, d.cin, d.k, d.k}, rng);
    const auto b = random_tensor({d.cout}, rng);
    const auto gy = random_tensor({d.n, d.cout, d.h, d.w}, rng);
    Tensor<float> y(gy.shape()), gx(x.shape()), gw(w.shape()), gb(b.shape());
    const double gflop = 2.0 * static_cast<double>(d.n * d.cout * d.cin * d.h * d.w * d.k * d.k) / 1e9;

    struct Row {
        const char* name;
        double ref_ms, fast_ms;
    };
    Row rows[3];
    rows[0] = {"conv2d_forward",
               time_ms([&] { kernels::ref::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d); }, reps),
               time_ms([&] { kernels::fast::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d); }, reps)};
    rows[1] = {"conv2d_backward_input",
               time_ms([&] { kernels::ref::conv2d_backward_input(gy.data(), w.data(), gx.data(), d); }, reps),
               time_ms([&] { kernels::fast::conv2d_backward_input(gy.data(), w.data(), gx.data(), d); }, reps)};
    rows[2] = {"conv2d_backward_weight",
               time_ms([&] { kernels::ref::conv2d_backward_weight(x.data(), gy.data(), gw.data(), gb.data(), d); }, reps),
               time_ms([&] { kernels::fast::conv2d_backward_weight(x.data(), gy.data(), gw.data(), gb.data(), d); }, reps)};

    std::printf("shape n=%lld cin=%lld %lldx%lld cout=%lld k=%lld (%.3f GFLOP)\n",
                (long long)d.n, (long long)d.cin, (long long)d.h, (long long)d.w,
                (long long)d.cout, (long long)d.k, gflop);
    for (const auto& r : rows)
        std::printf("  %-24s ref %8.3f ms (%6.2f GF/s)   omp %8.3f ms (%6.2f GF/s)   x%.2f\n",
                    r.name, r.ref_ms, gflop / r.ref_ms * 1e3, r.fast_ms,
                    gflop / r.fast_ms * 1e3, r.ref_ms / r.fast_ms);
}

void bench_model_step(int reps) {
    ArchDescriptor arch;
    arch.extent = 64;
    arch.base_width = 8;
    auto params = init_params<float>(7, arch);
    Rng rng(2);
    const auto images = random_tensor({10, 1, 64, 64}, rng);
    Tensor<float> masks({10, 1, 64, 64});
    for (int64_t i = 0; i < masks.numel(); ++i) masks[i] = rng.bernoulli(0.3) ? 1.0f : 0.0f;

    auto step = [&] {
        Tape<float> tape;
        MultiMixNet<float> net(tape, params, true);
        auto sal = compute_saliency(params, images);
        auto bridge = tape.constant(build_bridge(sal.map, images, arch.bridge_pool_steps()));
        Rng drop(3);
        auto cache = net.encode(tape.constant(images), Mode::train, drop);
        auto pred = net.decode(cache, bridge, Mode::train, drop);
        auto loss = tape.dice_loss(pred, masks);
        tape.backward(loss);
    };
    std::printf("\nfull segmentation pass (10x1x64x64, width 8, saliency + fwd + bwd):\n");
    kernels::set_exec_mode(kernels::Exec::serial);
    std::printf("  serial   %8.1f ms\n", time_ms(step, reps));
    kernels::set_exec_mode(kernels::Exec::parallel);
    std::printf("  parallel %8.1f ms\n", time_ms(step, reps));
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    bench_conv({10, 194, 8, 8, 64, 3, 1}, reps);
    bench_conv({10, 96, 16, 16, 32, 3, 1}, reps);
    bench_conv({10, 8, 64, 64, 8, 3, 1}, reps);
    bench_conv({10, 128, 4, 4, 128, 3, 1}, reps);
    bench_model_step(std::max(1, reps / 2));
    return 0;
}
