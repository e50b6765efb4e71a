#include "multimix/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "multimix/errors.hpp"

namespace multimix {

template <typename T>
SaliencyResult<T> compute_saliency(const ModelParams<T>& params, const Tensor<T>& x) {
    expect_rank(x, 4, "compute_saliency input");
    Tape<T> tape;
    MultiMixNet<T> net(tape, params, /*params_need_grad=*/false);
    Rng rng(0);  // eval mode: dropout is identity, the stream is never drawn
    auto xv = tape.leaf(x);
    auto cache = net.encode(xv, Mode::eval, rng);
    auto logits = net.classify(cache);
    const Tensor<T>& lv = tape.value(logits);

    // argmax class per sample, lowest index on ties
    const int64_t m = lv.dim(0), k = lv.dim(1);
    std::vector<int> argmax(static_cast<size_t>(m), 0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 1; j < k; ++j)
            if (lv.at2(i, j) > lv.at2(i, argmax[static_cast<size_t>(i)]))
                argmax[static_cast<size_t>(i)] = static_cast<int>(j);

    // samples are independent, so one backward from the summed selected logits
    // yields each sample's own input gradient
    auto selected = tape.gather_rows(logits, argmax);
    tape.backward(tape.sum(selected));
    Tensor<T> grad = tape.grad(xv);
    if (!grad.all_finite()) throw NumericError("compute_saliency: non-finite gradient");

    // |grad|, then per-sample min-max to [0,1]; constant gradients map to zeros
    const int64_t per = grad.numel() / m;
    for (int64_t i = 0; i < grad.numel(); ++i) grad[i] = std::fabs(grad[i]);
    for (int64_t i = 0; i < m; ++i) {
        T* g = grad.data() + i * per;
        T lo = g[0], hi = g[0];
        for (int64_t j = 1; j < per; ++j) {
            lo = std::min(lo, g[j]);
            hi = std::max(hi, g[j]);
        }
        if (hi > lo) {
            const T scale = T(1) / (hi - lo);
            for (int64_t j = 0; j < per; ++j) g[j] = (g[j] - lo) * scale;
        } else {
            for (int64_t j = 0; j < per; ++j) g[j] = T(0);
        }
    }
    return {std::move(grad), lv};
}

template <typename T>
Tensor<T> build_bridge(const Tensor<T>& saliency, const Tensor<T>& x, int pool_steps) {
    if (saliency.shape() != x.shape())
        throw ShapeError("build_bridge: saliency " + shape_str(saliency.shape()) +
                         " vs image " + shape_str(x.shape()));
    expect_rank(x, 4, "build_bridge input");
    const int64_t m = x.dim(0);
    int64_t h = x.dim(2), w = x.dim(3);
    Tensor<T> cur({m, 2, h, w});
    for (int64_t i = 0; i < m; ++i) {
        std::copy(saliency.data() + i * h * w, saliency.data() + (i + 1) * h * w,
                  cur.data() + (i * 2) * h * w);
        std::copy(x.data() + i * h * w, x.data() + (i + 1) * h * w,
                  cur.data() + (i * 2 + 1) * h * w);
    }
    for (int step = 0; step < pool_steps; ++step) {
        if (h % 2 != 0 || w % 2 != 0)
            throw ShapeError("build_bridge: odd extent during downsampling");
        Tensor<T> next({m, 2, h / 2, w / 2});
        for (int64_t nc = 0; nc < m * 2; ++nc) {
            const T* src = cur.data() + nc * h * w;
            T* dst = next.data() + nc * (h / 2) * (w / 2);
            for (int64_t i = 0; i < h / 2; ++i)
                for (int64_t j = 0; j < w / 2; ++j)
                    dst[i * (w / 2) + j] = (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
                                            src[(2 * i + 1) * w + 2 * j] +
                                            src[(2 * i + 1) * w + 2 * j + 1]) /
                                           T(4);
        }
        cur = std::move(next);
        h /= 2;
        w /= 2;
    }
    return cur;
}

template struct SaliencyResult<float>;
template struct SaliencyResult<double>;
template SaliencyResult<float> compute_saliency<float>(const ModelParams<float>&,
                                                       const Tensor<float>&);
template SaliencyResult<double> compute_saliency<double>(const ModelParams<double>&,
                                                         const Tensor<double>&);
template Tensor<float> build_bridge<float>(const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> build_bridge<double>(const Tensor<double>&, const Tensor<double>&, int);

}  // namespace multimix
