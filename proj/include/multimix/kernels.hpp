#pragma once

#include <cstdint>

namespace multimix::kernels {

// Square kernel (k in {1,3}), stride 1. pad = 1 for 3x3, 0 for 1x1; output
// spatial extent equals input extent in both cases.
struct ConvDims {
    int64_t n = 0;
    int64_t cin = 0;
    int64_t h = 0;
    int64_t w = 0;
    int64_t cout = 0;
    int64_t k = 3;
    int64_t pad = 1;
};

// Execution policy. `parallel` runs the optimized kernels (OpenMP across
// independent outputs, SIMD reductions inside); `serial` runs the plain
// reference loops with naive summation order. Results agree to floating-point
// reassociation; each mode on its own is bitwise deterministic for any thread
// count because no kernel ever reduces across threads.
enum class Exec { serial, parallel };

Exec exec_mode();
void set_exec_mode(Exec mode);

// 0 means "library default". Applied to the OpenMP runtime.
void set_thread_cap(int threads);
int thread_cap();

// ---- reference kernels: textbook loops, no pragmas --------------------------

namespace ref {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvDims& d);

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d);

// Per (sample, channel) over hw elements. Writes normalized output plus the
// saved statistics the backward pass needs.
template <typename T>
void instance_norm_forward(const T* x, T* y, T* inv_std, int64_t nc, int64_t hw, T eps);

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* gy, T* gx, int64_t nc,
                            int64_t hw);

}  // namespace ref

// ---- optimized kernels: im2col + OpenMP/SIMD --------------------------------

namespace fast {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvDims& d);

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d);

template <typename T>
void instance_norm_forward(const T* x, T* y, T* inv_std, int64_t nc, int64_t hw, T eps);

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* gy, T* gx, int64_t nc,
                            int64_t hw);

}  // namespace fast

// ---- dispatch by exec_mode() -------------------------------------------------

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const ConvDims& d);

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvDims& d);

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d);

template <typename T>
void instance_norm_forward(const T* x, T* y, T* inv_std, int64_t nc, int64_t hw, T eps);

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* gy, T* gx, int64_t nc,
                            int64_t hw);

}  // namespace multimix::kernels
