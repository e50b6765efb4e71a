#include "multimix/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace multimix::kernels {

namespace {
Exec g_exec = Exec::parallel;
int g_thread_cap = 0;
}  // namespace

Exec exec_mode() { return g_exec; }
void set_exec_mode(Exec mode) { g_exec = mode; }

void set_thread_cap(int threads) {
    g_thread_cap = threads;
    if (threads > 0) omp_set_num_threads(threads);
}
int thread_cap() { return g_thread_cap; }

// =============================================================================
// reference kernels
// =============================================================================

namespace ref {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    const int64_t hw = d.h * d.w;
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t co = 0; co < d.cout; ++co) {
            for (int64_t oh = 0; oh < d.h; ++oh) {
                for (int64_t ow = 0; ow < d.w; ++ow) {
                    T acc = bias ? bias[co] : T(0);
                    for (int64_t ci = 0; ci < d.cin; ++ci) {
                        for (int64_t kh = 0; kh < d.k; ++kh) {
                            const int64_t ih = oh + kh - d.pad;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int64_t kw = 0; kw < d.k; ++kw) {
                                const int64_t iw = ow + kw - d.pad;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += x[(n * d.cin + ci) * hw + ih * d.w + iw] *
                                       w[((co * d.cin + ci) * d.k + kh) * d.k + kw];
                            }
                        }
                    }
                    y[(n * d.cout + co) * hw + oh * d.w + ow] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
    const int64_t hw = d.h * d.w;
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            for (int64_t ih = 0; ih < d.h; ++ih) {
                for (int64_t iw = 0; iw < d.w; ++iw) {
                    T acc = T(0);
                    // x[ih][iw] feeds y[ih - kh + pad][iw - kw + pad]
                    for (int64_t co = 0; co < d.cout; ++co) {
                        for (int64_t kh = 0; kh < d.k; ++kh) {
                            const int64_t oh = ih - kh + d.pad;
                            if (oh < 0 || oh >= d.h) continue;
                            for (int64_t kw = 0; kw < d.k; ++kw) {
                                const int64_t ow = iw - kw + d.pad;
                                if (ow < 0 || ow >= d.w) continue;
                                acc += gy[(n * d.cout + co) * hw + oh * d.w + ow] *
                                       w[((co * d.cin + ci) * d.k + kh) * d.k + kw];
                            }
                        }
                    }
                    gx[(n * d.cin + ci) * hw + ih * d.w + iw] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
    const int64_t hw = d.h * d.w;
    for (int64_t co = 0; co < d.cout; ++co) {
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            for (int64_t kh = 0; kh < d.k; ++kh) {
                for (int64_t kw = 0; kw < d.k; ++kw) {
                    T acc = T(0);
                    for (int64_t n = 0; n < d.n; ++n) {
                        for (int64_t oh = 0; oh < d.h; ++oh) {
                            const int64_t ih = oh + kh - d.pad;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int64_t ow = 0; ow < d.w; ++ow) {
                                const int64_t iw = ow + kw - d.pad;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += gy[(n * d.cout + co) * hw + oh * d.w + ow] *
                                       x[(n * d.cin + ci) * hw + ih * d.w + iw];
                            }
                        }
                    }
                    gw[((co * d.cin + ci) * d.k + kh) * d.k + kw] = acc;
                }
            }
        }
        T acc = T(0);
        for (int64_t n = 0; n < d.n; ++n)
            for (int64_t i = 0; i < hw; ++i) acc += gy[(n * d.cout + co) * hw + i];
        gb[co] = acc;
    }
}

template <typename T>
void instance_norm_forward(const T* x, T* y, T* inv_std, int64_t nc, int64_t hw, T eps) {
    for (int64_t c = 0; c < nc; ++c) {
        const T* xp = x + c * hw;
        T mean = T(0);
        for (int64_t i = 0; i < hw; ++i) mean += xp[i];
        mean /= static_cast<T>(hw);
        T var = T(0);
        for (int64_t i = 0; i < hw; ++i) {
            const T dlt = xp[i] - mean;
            var += dlt * dlt;
        }
        var /= static_cast<T>(hw);  // population variance
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[c] = is;
        T* yp = y + c * hw;
        for (int64_t i = 0; i < hw; ++i) yp[i] = (xp[i] - mean) * is;
    }
}

// gx = inv_std * (gy - mean(gy) - y * mean(gy*y))
template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* gy, T* gx, int64_t nc,
                            int64_t hw) {
    for (int64_t c = 0; c < nc; ++c) {
        const T* yp = y + c * hw;
        const T* gp = gy + c * hw;
        T sum_g = T(0), sum_gy = T(0);
        for (int64_t i = 0; i < hw; ++i) {
            sum_g += gp[i];
            sum_gy += gp[i] * yp[i];
        }
        const T mean_g = sum_g / static_cast<T>(hw);
        const T mean_gy = sum_gy / static_cast<T>(hw);
        T* op = gx + c * hw;
        for (int64_t i = 0; i < hw; ++i) op[i] = inv_std[c] * (gp[i] - mean_g - yp[i] * mean_gy);
    }
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*,
                                    const ConvDims&);
template void conv2d_forward<double>(const double*, const double*, const double*, double*,
                                     const ConvDims&);
template void conv2d_backward_input<float>(const float*, const float*, float*, const ConvDims&);
template void conv2d_backward_input<double>(const double*, const double*, double*,
                                            const ConvDims&);
template void conv2d_backward_weight<float>(const float*, const float*, float*, float*,
                                            const ConvDims&);
template void conv2d_backward_weight<double>(const double*, const double*, double*, double*,
                                             const ConvDims&);
template void instance_norm_forward<float>(const float*, float*, float*, int64_t, int64_t, float);
template void instance_norm_forward<double>(const double*, double*, double*, int64_t, int64_t,
                                            double);
template void instance_norm_backward<float>(const float*, const float*, const float*, float*,
                                            int64_t, int64_t);
template void instance_norm_backward<double>(const double*, const double*, const double*, double*,
                                             int64_t, int64_t);

}  // namespace ref

// =============================================================================
// optimized kernels
// =============================================================================

namespace fast {

namespace {

// Scratch columns, one buffer per OpenMP thread.
template <typename T>
std::vector<T>& col_buffer() {
    static thread_local std::vector<T> buf;
    return buf;
}

// col[(ci*k + kh)*k + kw][oh*w + ow] = x[ci][oh + kh - pad][ow + kw - pad], 0 outside
template <typename T>
void im2col_image(const T* x, T* col, const ConvDims& d) {
    const int64_t hw = d.h * d.w;
    for (int64_t ci = 0; ci < d.cin; ++ci) {
        const T* xp = x + ci * hw;
        for (int64_t kh = 0; kh < d.k; ++kh) {
            for (int64_t kw = 0; kw < d.k; ++kw) {
                T* cp = col + ((ci * d.k + kh) * d.k + kw) * hw;
                const int64_t dy = kh - d.pad, dx = kw - d.pad;
                const int64_t oh0 = std::max<int64_t>(0, -dy);
                const int64_t oh1 = std::min<int64_t>(d.h, d.h - dy);
                const int64_t ow0 = std::max<int64_t>(0, -dx);
                const int64_t ow1 = std::min<int64_t>(d.w, d.w - dx);
                for (int64_t oh = 0; oh < d.h; ++oh) {
                    T* crow = cp + oh * d.w;
                    if (oh < oh0 || oh >= oh1) {
                        std::memset(crow, 0, static_cast<size_t>(d.w) * sizeof(T));
                        continue;
                    }
                    if (ow0 > 0) std::memset(crow, 0, static_cast<size_t>(ow0) * sizeof(T));
                    if (ow1 < d.w)
                        std::memset(crow + ow1, 0, static_cast<size_t>(d.w - ow1) * sizeof(T));
                    std::memcpy(crow + ow0, xp + (oh + dy) * d.w + dx + ow0,
                                static_cast<size_t>(ow1 - ow0) * sizeof(T));
                }
            }
        }
    }
}

}  // namespace

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    const int64_t hw = d.h * d.w;
    const int64_t K = d.cin * d.k * d.k;
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < d.n; ++n) {
        auto& col = col_buffer<T>();
        col.resize(static_cast<size_t>(K * hw));
        im2col_image(x + n * d.cin * hw, col.data(), d);
        for (int64_t co = 0; co < d.cout; ++co) {
            T* yp = y + (n * d.cout + co) * hw;
            const T b = bias ? bias[co] : T(0);
            std::fill(yp, yp + hw, b);
            const T* wp = w + co * K;
            for (int64_t k = 0; k < K; ++k) {
                const T wv = wp[k];
                const T* cp = col.data() + k * hw;
#pragma omp simd
                for (int64_t i = 0; i < hw; ++i) yp[i] += wv * cp[i];
            }
        }
    }
}

// Backward to input is a full correlation with the flipped, channel-transposed
// kernel; reuse the forward routine on a transformed weight tensor.
template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
    std::vector<T> wt(static_cast<size_t>(d.cin * d.cout * d.k * d.k));
    for (int64_t co = 0; co < d.cout; ++co)
        for (int64_t ci = 0; ci < d.cin; ++ci)
            for (int64_t kh = 0; kh < d.k; ++kh)
                for (int64_t kw = 0; kw < d.k; ++kw)
                    wt[((ci * d.cout + co) * d.k + (d.k - 1 - kh)) * d.k + (d.k - 1 - kw)] =
                        w[((co * d.cin + ci) * d.k + kh) * d.k + kw];
    ConvDims dt = d;
    std::swap(dt.cin, dt.cout);
    fast::conv2d_forward(gy, wt.data(), static_cast<const T*>(nullptr), gx, dt);
}

// Each (co) accumulates its own gw row over samples in order, so the result is
// independent of the thread count. The im2col buffer is shared per sample.
template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
    const int64_t hw = d.h * d.w;
    const int64_t K = d.cin * d.k * d.k;
    std::vector<T> col(static_cast<size_t>(K * hw));
    std::fill(gw, gw + d.cout * K, T(0));
    std::fill(gb, gb + d.cout, T(0));
    for (int64_t n = 0; n < d.n; ++n) {
        im2col_image(x + n * d.cin * hw, col.data(), d);
#pragma omp parallel for schedule(static)
        for (int64_t co = 0; co < d.cout; ++co) {
            const T* gp = gy + (n * d.cout + co) * hw;
            T* out = gw + co * K;
            for (int64_t k = 0; k < K; ++k) {
                const T* cp = col.data() + k * hw;
                T s = T(0);
#pragma omp simd reduction(+ : s)
                for (int64_t i = 0; i < hw; ++i) s += gp[i] * cp[i];
                out[k] += s;
            }
            T sb = T(0);
#pragma omp simd reduction(+ : sb)
            for (int64_t i = 0; i < hw; ++i) sb += gp[i];
            gb[co] += sb;
        }
    }
}

template <typename T>
void instance_norm_forward(const T* x, T* y, T* inv_std, int64_t nc, int64_t hw, T eps) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < nc; ++c) {
        const T* xp = x + c * hw;
        T mean = T(0);
#pragma omp simd reduction(+ : mean)
        for (int64_t i = 0; i < hw; ++i) mean += xp[i];
        mean /= static_cast<T>(hw);
        T var = T(0);
#pragma omp simd reduction(+ : var)
        for (int64_t i = 0; i < hw; ++i) var += (xp[i] - mean) * (xp[i] - mean);
        var /= static_cast<T>(hw);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[c] = is;
        T* yp = y + c * hw;
#pragma omp simd
        for (int64_t i = 0; i < hw; ++i) yp[i] = (xp[i] - mean) * is;
    }
}

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* gy, T* gx, int64_t nc,
                            int64_t hw) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < nc; ++c) {
        const T* yp = y + c * hw;
        const T* gp = gy + c * hw;
        T sum_g = T(0), sum_gy = T(0);
#pragma omp simd reduction(+ : sum_g, sum_gy)
        for (int64_t i = 0; i < hw; ++i) {
            sum_g += gp[i];
            sum_gy += gp[i] * yp[i];
        }
        const T mean_g = sum_g / static_cast<T>(hw);
        const T mean_gy = sum_gy / static_cast<T>(hw);
        T* op = gx + c * hw;
#pragma omp simd
        for (int64_t i = 0; i < hw; ++i) op[i] = inv_std[c] * (gp[i] - mean_g - yp[i] * mean_gy);
    }
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*,
                                    const ConvDims&);
template void conv2d_forward<double>(const double*, const double*, const double*, double*,
                                     const ConvDims&);
template void conv2d_backward_input<float>(const float*, const float*, float*, const ConvDims&);
template void conv2d_backward_input<double>(const double*, const double*, double*,
                                            const ConvDims&);
template void conv2d_backward_weight<float>(const float*, const float*, float*, float*,
                                            const ConvDims&);
template void conv2d_backward_weight<double>(const double*, const double*, double*, double*,
                                             const ConvDims&);
template void instance_norm_forward<float>(const float*, float*, float*, int64_t, int64_t, float);
template void instance_norm_forward<double>(const double*, double*, double*, int64_t, int64_t,
                                            double);
template void instance_norm_backward<float>(const float*, const float*, const float*, float*,
                                            int64_t, int64_t);
template void instance_norm_backward<double>(const double*, const double*, const double*, double*,
                                             int64_t, int64_t);

}  // namespace fast

// =============================================================================
// dispatch
// =============================================================================

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    if (g_exec == Exec::serial)
        ref::conv2d_forward(x, w, bias, y, d);
    else
        fast::conv2d_forward(x, w, bias, y, d);
}

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
    if (g_exec == Exec::serial)
        ref::conv2d_backward_input(gy, w, gx, d);
    else
        fast::conv2d_backward_input(gy, w, gx, d);
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
    if (g_exec == Exec::serial)
        ref::conv2d_backward_weight(x, gy, gw, gb, d);
    else
        fast::conv2d_backward_weight(x, gy, gw, gb, d);
}

template <typename T>
void instance_norm_forward(const T* x, T* y, T* inv_std, int64_t nc, int64_t hw, T eps) {
    if (g_exec == Exec::serial)
        ref::instance_norm_forward(x, y, inv_std, nc, hw, eps);
    else
        fast::instance_norm_forward(x, y, inv_std, nc, hw, eps);
}

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* gy, T* gx, int64_t nc,
                            int64_t hw) {
    if (g_exec == Exec::serial)
        ref::instance_norm_backward(y, inv_std, gy, gx, nc, hw);
    else
        fast::instance_norm_backward(y, inv_std, gy, gx, nc, hw);
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*,
                                    const ConvDims&);
template void conv2d_forward<double>(const double*, const double*, const double*, double*,
                                     const ConvDims&);
template void conv2d_backward_input<float>(const float*, const float*, float*, const ConvDims&);
template void conv2d_backward_input<double>(const double*, const double*, double*,
                                            const ConvDims&);
template void conv2d_backward_weight<float>(const float*, const float*, float*, float*,
                                            const ConvDims&);
template void conv2d_backward_weight<double>(const double*, const double*, double*, double*,
                                             const ConvDims&);
template void instance_norm_forward<float>(const float*, float*, float*, int64_t, int64_t, float);
template void instance_norm_forward<double>(const double*, double*, double*, int64_t, int64_t,
                                            double);
template void instance_norm_backward<float>(const float*, const float*, const float*, float*,
                                            int64_t, int64_t);
template void instance_norm_backward<double>(const double*, const double*, const double*, double*,
                                             int64_t, int64_t);

}  // namespace multimix::kernels
