// Independent brute-force oracles used by the test suites. These are written
// against the definitions directly and never call into the library's compute
// paths, so they stay valid as the optimized kernels evolve.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "multimix/tensor.hpp"

namespace oracles {

using multimix::Tensor;

// direct nested-loop cross-correlation, square kernel, stride 1
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int64_t pad) {
    const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t cout = w.dim(0), k = w.dim(2);
    Tensor<T> y({n, cout, h, wd});
    for (int64_t in = 0; in < n; ++in)
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t oh = 0; oh < h; ++oh)
                for (int64_t ow = 0; ow < wd; ++ow) {
                    double acc = static_cast<double>(b[co]);
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t kh = 0; kh < k; ++kh)
                            for (int64_t kw = 0; kw < k; ++kw) {
                                const int64_t ih = oh + kh - pad, iw = ow + kw - pad;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                                acc += static_cast<double>(x.at4(in, ci, ih, iw)) *
                                       static_cast<double>(w.at4(co, ci, kh, kw));
                            }
                    y.at4(in, co, oh, ow) = static_cast<T>(acc);
                }
    return y;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({n, c, h / 2, w / 2});
    for (int64_t in = 0; in < n; ++in)
        for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t i = 0; i < h / 2; ++i)
                for (int64_t j = 0; j < w / 2; ++j) {
                    T m = x.at4(in, ic, 2 * i, 2 * j);
                    m = std::max(m, x.at4(in, ic, 2 * i, 2 * j + 1));
                    m = std::max(m, x.at4(in, ic, 2 * i + 1, 2 * j));
                    m = std::max(m, x.at4(in, ic, 2 * i + 1, 2 * j + 1));
                    y.at4(in, ic, i, j) = m;
                }
    return y;
}

template <typename T>
std::vector<T> global_mean(const Tensor<T>& x) {
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<size_t>(n * c));
    for (int64_t nc = 0; nc < n * c; ++nc) {
        double s = 0;
        for (int64_t i = 0; i < hw; ++i) s += x[nc * hw + i];
        out[static_cast<size_t>(nc)] = static_cast<T>(s / static_cast<double>(hw));
    }
    return out;
}

// ---- segmentation metric oracles: explicit set/pair enumeration -------------

struct Pixel {
    int64_t r, c;
};

inline std::vector<Pixel> foreground(const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
    std::vector<Pixel> out;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c)
            if (mask[static_cast<size_t>(r * w + c)]) out.push_back({r, c});
    return out;
}

inline double dice_sets(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int64_t inter = 0, ca = 0, cb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]);
        ca += a[i] ? 1 : 0;
        cb += b[i] ? 1 : 0;
    }
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

inline double jaccard_sets(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]);
        uni += (a[i] || b[i]);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// symmetric mean of nearest-neighbour Euclidean distances over foreground sets;
// both empty -> 0, exactly one empty -> diagonal of the pixel grid
inline double avg_hausdorff_sets(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b,
                                 int64_t h, int64_t w) {
    const auto fa = foreground(a, h, w);
    const auto fb = foreground(b, h, w);
    if (fa.empty() && fb.empty()) return 0.0;
    if (fa.empty() || fb.empty())
        return std::sqrt(static_cast<double>((h - 1) * (h - 1) + (w - 1) * (w - 1)));
    auto directed = [](const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
        double total = 0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::max();
            for (const auto& q : to) {
                const double dr = static_cast<double>(p.r - q.r);
                const double dc = static_cast<double>(p.c - q.c);
                best = std::min(best, std::sqrt(dr * dr + dc * dc));
            }
            total += best;
        }
        return total / static_cast<double>(from.size());
    };
    return 0.5 * (directed(fa, fb) + directed(fb, fa));
}

inline std::pair<double, double> precision_recall_sets(const std::vector<uint8_t>& pred,
                                                       const std::vector<uint8_t>& ref) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        tp += (pred[i] && ref[i]);
        fp += (pred[i] && !ref[i]);
        fn += (!pred[i] && ref[i]);
    }
    double p, r;
    if (tp + fp == 0)
        p = (tp + fn == 0) ? 1.0 : 0.0;
    else
        p = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn == 0)
        r = (tp + fp == 0) ? 1.0 : 0.0;
    else
        r = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return {p, r};
}

// AUC by counting correctly ordered positive/negative pairs, ties worth 1/2
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
    double won = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i)
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                won += 1.0;
            else if (scores[i] == scores[j])
                won += 0.5;
        }
    return won / static_cast<double>(pairs);
}

}  // namespace oracles
