#include "multimix/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "multimix/kernels.hpp"

namespace multimix {

namespace {

template <typename T>
kernels::ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w) {
    kernels::ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.k = w.dim(2);
    d.pad = (d.k == 3) ? 1 : 0;
    return d;
}

}  // namespace

template <typename T>
int Tape<T>::push(Tensor<T> value, bool needs_grad, std::function<void(Tape&, int)> backprop) {
    nodes_.push_back(Node{std::move(value), std::move(backprop), needs_grad});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
void Tape<T>::check(Var v, const char* what) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw ShapeError(std::string(what) + ": invalid tape var");
}

template <typename T>
void Tape<T>::check_finite(int id, const char* op) const {
    if (!nodes_[static_cast<size_t>(id)].value.all_finite())
        throw NumericError(std::string(op) + ": non-finite output");
}

template <typename T>
Tensor<T>& Tape<T>::grad_buf(int id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) g = Tensor<T>(nodes_[static_cast<size_t>(id)].value.shape());
    return g;
}

template <typename T>
typename Tape<T>::Var Tape<T>::leaf(Tensor<T> value) {
    return Var{push(std::move(value), true, nullptr)};
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value) {
    return Var{push(std::move(value), false, nullptr)};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
    check(v, "value");
    return nodes_[static_cast<size_t>(v.id)].value;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) {
    check(v, "grad");
    return grad_buf(v.id);
}

// ---- conv ------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::conv2d(Var x, Var w, Var b) {
    check(x, "conv2d");
    check(w, "conv2d");
    check(b, "conv2d");
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    expect_rank(xv, 4, "conv2d input");
    expect_rank(wv, 4, "conv2d weight");
    if (wv.dim(2) != wv.dim(3) || (wv.dim(2) != 3 && wv.dim(2) != 1))
        throw ShapeError("conv2d: kernel must be 3x3 or 1x1, got " + shape_str(wv.shape()));
    if (xv.dim(1) != wv.dim(1))
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(xv.shape()) +
                         " vs weight " + shape_str(wv.shape()));
    expect_shape(bv, {wv.dim(0)}, "conv2d bias");

    const auto d = conv_dims(xv, wv);
    Tensor<T> y({d.n, d.cout, d.h, d.w});
    kernels::conv2d_forward(xv.data(), wv.data(), bv.data(), y.data(), d);

    const bool needs = nodes_[static_cast<size_t>(x.id)].needs_grad ||
                       nodes_[static_cast<size_t>(w.id)].needs_grad ||
                       nodes_[static_cast<size_t>(b.id)].needs_grad;
    const int xi = x.id, wi = w.id, bi = b.id;
    Var out{push(std::move(y), needs, [xi, wi, bi, d](Tape& t, int self) {
        const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
        if (t.nodes_[static_cast<size_t>(xi)].needs_grad) {
            Tensor<T> gx(t.nodes_[static_cast<size_t>(xi)].value.shape());
            kernels::conv2d_backward_input(gy.data(), t.nodes_[static_cast<size_t>(wi)].value.data(),
                                           gx.data(), d);
            Tensor<T>& acc = t.grad_buf(xi);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gx[i];
        }
        if (t.nodes_[static_cast<size_t>(wi)].needs_grad ||
            t.nodes_[static_cast<size_t>(bi)].needs_grad) {
            Tensor<T> gw(t.nodes_[static_cast<size_t>(wi)].value.shape());
            Tensor<T> gb(t.nodes_[static_cast<size_t>(bi)].value.shape());
            kernels::conv2d_backward_weight(t.nodes_[static_cast<size_t>(xi)].value.data(),
                                            gy.data(), gw.data(), gb.data(), d);
            if (t.nodes_[static_cast<size_t>(wi)].needs_grad) {
                Tensor<T>& acc = t.grad_buf(wi);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gw[i];
            }
            if (t.nodes_[static_cast<size_t>(bi)].needs_grad) {
                Tensor<T>& acc = t.grad_buf(bi);
                for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gb[i];
            }
        }
    })};
    check_finite(out.id, "conv2d");
    return out;
}

// ---- instance norm -----------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::instance_norm(Var x) {
    check(x, "instance_norm");
    const Tensor<T>& xv = value(x);
    expect_rank(xv, 4, "instance_norm input");
    const int64_t nc = xv.dim(0) * xv.dim(1);
    const int64_t hw = xv.dim(2) * xv.dim(3);
    if (hw < 2) throw ShapeError("instance_norm: spatial extent must be >= 2 elements");

    Tensor<T> y(xv.shape());
    Tensor<T> inv_std({nc});
    kernels::instance_norm_forward(xv.data(), y.data(), inv_std.data(), nc, hw, T(1e-5));

    const bool needs = nodes_[static_cast<size_t>(x.id)].needs_grad;
    const int xi = x.id;
    Var out{push(std::move(y), needs,
                 [xi, nc, hw, inv_std = std::move(inv_std)](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     const Tensor<T>& y = t.nodes_[static_cast<size_t>(self)].value;
                     Tensor<T> gx(y.shape());
                     kernels::instance_norm_backward(y.data(), inv_std.data(), gy.data(), gx.data(),
                                                     nc, hw);
                     Tensor<T>& acc = t.grad_buf(xi);
                     for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gx[i];
                 })};
    check_finite(out.id, "instance_norm");
    return out;
}

// ---- elementwise activations --------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::leaky_relu(Var x) {
    check(x, "leaky_relu");
    const Tensor<T>& xv = value(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] >= T(0) ? xv[i] : T(0.2) * xv[i];
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     const Tensor<T>& xv = t.nodes_[static_cast<size_t>(xi)].value;
                     Tensor<T>& acc = t.grad_buf(xi);
                     for (int64_t i = 0; i < acc.numel(); ++i)
                         acc[i] += gy[i] * (xv[i] >= T(0) ? T(1) : T(0.2));
                 })};
    check_finite(out.id, "leaky_relu");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::sigmoid(Var x) {
    check(x, "sigmoid");
    const Tensor<T>& xv = value(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const T v = xv[i];
        if (v >= T(0)) {
            y[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y[i] = e / (T(1) + e);
        }
    }
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     const Tensor<T>& y = t.nodes_[static_cast<size_t>(self)].value;
                     Tensor<T>& acc = t.grad_buf(xi);
                     for (int64_t i = 0; i < acc.numel(); ++i)
                         acc[i] += gy[i] * y[i] * (T(1) - y[i]);
                 })};
    check_finite(out.id, "sigmoid");
    return out;
}

// ---- pooling / resampling ------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::maxpool2(Var x) {
    check(x, "maxpool2");
    const Tensor<T>& xv = value(x);
    expect_rank(xv, 4, "maxpool2 input");
    const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2: odd spatial extent " + shape_str(xv.shape()));
    const int64_t oh = h / 2, ow = w / 2;
    Tensor<T> y({n, c, oh, ow});
    std::vector<int64_t> argmax(static_cast<size_t>(n * c * oh * ow));
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* xp = xv.data() + nc * h * w;
        T* yp = y.data() + nc * oh * ow;
        int64_t* ap = argmax.data() + nc * oh * ow;
        for (int64_t i = 0; i < oh; ++i) {
            for (int64_t j = 0; j < ow; ++j) {
                // scan the 2x2 window in row-major order; strict > keeps the first max
                int64_t best = (2 * i) * w + 2 * j;
                T bv = xp[best];
                const int64_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                         (2 * i + 1) * w + 2 * j + 1};
                for (int64_t k = 0; k < 3; ++k)
                    if (xp[cand[k]] > bv) {
                        bv = xp[cand[k]];
                        best = cand[k];
                    }
                yp[i * ow + j] = bv;
                ap[i * ow + j] = best;
            }
        }
    }
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi, argmax = std::move(argmax), h, w, oh, ow](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(xi);
                     const int64_t planes = gy.numel() / (oh * ow);
                     for (int64_t nc = 0; nc < planes; ++nc)
                         for (int64_t i = 0; i < oh * ow; ++i)
                             acc[nc * h * w + argmax[static_cast<size_t>(nc * oh * ow + i)]] +=
                                 gy[nc * oh * ow + i];
                 })};
    check_finite(out.id, "maxpool2");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::avgpool2(Var x) {
    check(x, "avgpool2");
    const Tensor<T>& xv = value(x);
    expect_rank(xv, 4, "avgpool2 input");
    const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("avgpool2: odd spatial extent " + shape_str(xv.shape()));
    const int64_t oh = h / 2, ow = w / 2;
    Tensor<T> y({n, c, oh, ow});
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* xp = xv.data() + nc * h * w;
        T* yp = y.data() + nc * oh * ow;
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j)
                yp[i * ow + j] =
                    (xp[(2 * i) * w + 2 * j] + xp[(2 * i) * w + 2 * j + 1] +
                     xp[(2 * i + 1) * w + 2 * j] + xp[(2 * i + 1) * w + 2 * j + 1]) /
                    T(4);
    }
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi, h, w, oh, ow](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(xi);
                     const int64_t planes = gy.numel() / (oh * ow);
                     for (int64_t nc = 0; nc < planes; ++nc)
                         for (int64_t i = 0; i < oh; ++i)
                             for (int64_t j = 0; j < ow; ++j) {
                                 const T g = gy[nc * oh * ow + i * ow + j] / T(4);
                                 acc[nc * h * w + (2 * i) * w + 2 * j] += g;
                                 acc[nc * h * w + (2 * i) * w + 2 * j + 1] += g;
                                 acc[nc * h * w + (2 * i + 1) * w + 2 * j] += g;
                                 acc[nc * h * w + (2 * i + 1) * w + 2 * j + 1] += g;
                             }
                 })};
    check_finite(out.id, "avgpool2");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::avgpool_global(Var x) {
    check(x, "avgpool_global");
    const Tensor<T>& xv = value(x);
    expect_rank(xv, 4, "avgpool_global input");
    const int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor<T> y({n, c});
    for (int64_t nc = 0; nc < n * c; ++nc) {
        T s = T(0);
        const T* xp = xv.data() + nc * hw;
        for (int64_t i = 0; i < hw; ++i) s += xp[i];
        y[nc] = s / static_cast<T>(hw);
    }
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi, hw](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(xi);
                     for (int64_t nc = 0; nc < gy.numel(); ++nc) {
                         const T g = gy[nc] / static_cast<T>(hw);
                         for (int64_t i = 0; i < hw; ++i) acc[nc * hw + i] += g;
                     }
                 })};
    check_finite(out.id, "avgpool_global");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::upsample_nearest2(Var x) {
    check(x, "upsample_nearest2");
    const Tensor<T>& xv = value(x);
    expect_rank(xv, 4, "upsample_nearest2 input");
    const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor<T> y({n, c, 2 * h, 2 * w});
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* xp = xv.data() + nc * h * w;
        T* yp = y.data() + nc * 4 * h * w;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                const T v = xp[i * w + j];
                yp[(2 * i) * 2 * w + 2 * j] = v;
                yp[(2 * i) * 2 * w + 2 * j + 1] = v;
                yp[(2 * i + 1) * 2 * w + 2 * j] = v;
                yp[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
            }
    }
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi, h, w](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(xi);
                     const int64_t planes = acc.numel() / (h * w);
                     for (int64_t nc = 0; nc < planes; ++nc) {
                         const T* gp = gy.data() + nc * 4 * h * w;
                         for (int64_t i = 0; i < h; ++i)
                             for (int64_t j = 0; j < w; ++j)
                                 acc[nc * h * w + i * w + j] +=
                                     gp[(2 * i) * 2 * w + 2 * j] + gp[(2 * i) * 2 * w + 2 * j + 1] +
                                     gp[(2 * i + 1) * 2 * w + 2 * j] +
                                     gp[(2 * i + 1) * 2 * w + 2 * j + 1];
                     }
                 })};
    check_finite(out.id, "upsample_nearest2");
    return out;
}

// ---- linear ---------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::linear(Var x, Var w, Var b) {
    check(x, "linear");
    check(w, "linear");
    check(b, "linear");
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    expect_rank(xv, 2, "linear input");
    expect_rank(wv, 2, "linear weight");
    if (xv.dim(1) != wv.dim(1))
        throw ShapeError("linear: inner dims disagree, " + shape_str(xv.shape()) + " vs " +
                         shape_str(wv.shape()));
    expect_shape(bv, {wv.dim(0)}, "linear bias");
    const int64_t m = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
    Tensor<T> y({m, out_dim});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t o = 0; o < out_dim; ++o) {
            T s = bv[o];
            for (int64_t k = 0; k < in; ++k) s += xv[i * in + k] * wv[o * in + k];
            y[i * out_dim + o] = s;
        }
    const int xi = x.id, wi = w.id, bi = b.id;
    const bool needs = nodes_[static_cast<size_t>(xi)].needs_grad ||
                       nodes_[static_cast<size_t>(wi)].needs_grad ||
                       nodes_[static_cast<size_t>(bi)].needs_grad;
    Var out{push(std::move(y), needs, [xi, wi, bi, m, in, out_dim](Tape& t, int self) {
        const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
        const Tensor<T>& xv = t.nodes_[static_cast<size_t>(xi)].value;
        const Tensor<T>& wv = t.nodes_[static_cast<size_t>(wi)].value;
        if (t.nodes_[static_cast<size_t>(xi)].needs_grad) {
            Tensor<T>& gx = t.grad_buf(xi);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t k = 0; k < in; ++k) {
                    T s = T(0);
                    for (int64_t o = 0; o < out_dim; ++o)
                        s += gy[i * out_dim + o] * wv[o * in + k];
                    gx[i * in + k] += s;
                }
        }
        if (t.nodes_[static_cast<size_t>(wi)].needs_grad) {
            Tensor<T>& gw = t.grad_buf(wi);
            for (int64_t o = 0; o < out_dim; ++o)
                for (int64_t k = 0; k < in; ++k) {
                    T s = T(0);
                    for (int64_t i = 0; i < m; ++i) s += gy[i * out_dim + o] * xv[i * in + k];
                    gw[o * in + k] += s;
                }
        }
        if (t.nodes_[static_cast<size_t>(bi)].needs_grad) {
            Tensor<T>& gb = t.grad_buf(bi);
            for (int64_t o = 0; o < out_dim; ++o) {
                T s = T(0);
                for (int64_t i = 0; i < m; ++i) s += gy[i * out_dim + o];
                gb[o] += s;
            }
        }
    })};
    check_finite(out.id, "linear");
    return out;
}

// ---- concat ----------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no parts");
    for (const Var& p : parts) check(p, "concat_channels");
    const Tensor<T>& first = value(parts[0]);
    expect_rank(first, 4, "concat_channels input");
    const int64_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
    int64_t total_c = 0;
    bool needs = false;
    std::vector<int> ids;
    std::vector<int64_t> chans;
    for (const Var& p : parts) {
        const Tensor<T>& v = value(p);
        expect_rank(v, 4, "concat_channels input");
        if (v.dim(0) != n || v.dim(2) != h || v.dim(3) != w)
            throw ShapeError("concat_channels: spatial/batch mismatch, " + shape_str(v.shape()) +
                             " vs " + shape_str(first.shape()));
        total_c += v.dim(1);
        needs = needs || nodes_[static_cast<size_t>(p.id)].needs_grad;
        ids.push_back(p.id);
        chans.push_back(v.dim(1));
    }
    Tensor<T> y({n, total_c, h, w});
    const int64_t hw = h * w;
    for (int64_t in = 0; in < n; ++in) {
        int64_t coff = 0;
        for (size_t p = 0; p < ids.size(); ++p) {
            const Tensor<T>& v = nodes_[static_cast<size_t>(ids[p])].value;
            std::copy(v.data() + in * chans[p] * hw, v.data() + (in + 1) * chans[p] * hw,
                      y.data() + (in * total_c + coff) * hw);
            coff += chans[p];
        }
    }
    Var out{push(std::move(y), needs,
                 [ids, chans, n, hw, total_c](Tape& t, int self) {
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     for (int64_t in = 0; in < n; ++in) {
                         int64_t coff = 0;
                         for (size_t p = 0; p < ids.size(); ++p) {
                             if (t.nodes_[static_cast<size_t>(ids[p])].needs_grad) {
                                 Tensor<T>& acc = t.grad_buf(ids[p]);
                                 const T* src = gy.data() + (in * total_c + coff) * hw;
                                 T* dst = acc.data() + in * chans[p] * hw;
                                 for (int64_t i = 0; i < chans[p] * hw; ++i) dst[i] += src[i];
                             }
                             coff += chans[p];
                         }
                     }
                 })};
    check_finite(out.id, "concat_channels");
    return out;
}

// ---- softmax ----------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::softmax(Var logits) {
    check(logits, "softmax");
    const Tensor<T>& lv = value(logits);
    expect_rank(lv, 2, "softmax input");
    const int64_t m = lv.dim(0), k = lv.dim(1);
    Tensor<T> y({m, k});
    for (int64_t i = 0; i < m; ++i) {
        T mx = lv[i * k];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, lv[i * k + j]);
        T denom = T(0);
        for (int64_t j = 0; j < k; ++j) {
            y[i * k + j] = std::exp(lv[i * k + j] - mx);
            denom += y[i * k + j];
        }
        for (int64_t j = 0; j < k; ++j) y[i * k + j] /= denom;
    }
    const int li = logits.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(li)].needs_grad,
                 [li, m, k](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(li)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     const Tensor<T>& y = t.nodes_[static_cast<size_t>(self)].value;
                     Tensor<T>& acc = t.grad_buf(li);
                     for (int64_t i = 0; i < m; ++i) {
                         T dot = T(0);
                         for (int64_t j = 0; j < k; ++j) dot += gy[i * k + j] * y[i * k + j];
                         for (int64_t j = 0; j < k; ++j)
                             acc[i * k + j] += y[i * k + j] * (gy[i * k + j] - dot);
                     }
                 })};
    check_finite(out.id, "softmax");
    return out;
}

// ---- dropout ----------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::dropout(Var x, double rate, Mode mode, Rng& rng) {
    check(x, "dropout");
    if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout: rate must be in [0,1)");
    if (mode == Mode::eval || rate == 0.0) return x;  // identity, no node
    const Tensor<T>& xv = value(x);
    const T scale = T(1.0 / (1.0 - rate));
    std::vector<uint8_t> keep(static_cast<size_t>(xv.numel()));
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        keep[static_cast<size_t>(i)] = rng.next_double() >= rate ? 1 : 0;
        y[i] = keep[static_cast<size_t>(i)] ? xv[i] * scale : T(0);
    }
    const int xi = x.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi, scale, keep = std::move(keep)](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(xi);
                     for (int64_t i = 0; i < acc.numel(); ++i)
                         if (keep[static_cast<size_t>(i)]) acc[i] += gy[i] * scale;
                 })};
    check_finite(out.id, "dropout");
    return out;
}

// ---- losses ------------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::cross_entropy(Var logits, const std::vector<int>& labels,
                                             const std::vector<uint8_t>* mask) {
    check(logits, "cross_entropy");
    const Tensor<T>& lv = value(logits);
    expect_rank(lv, 2, "cross_entropy logits");
    const int64_t m = lv.dim(0), k = lv.dim(1);
    if (m == 0) throw ShapeError("cross_entropy: empty batch");
    if (static_cast<int64_t>(labels.size()) != m)
        throw ShapeError("cross_entropy: label count mismatch");
    if (mask && static_cast<int64_t>(mask->size()) != m)
        throw ShapeError("cross_entropy: mask length mismatch");
    for (int lab : labels)
        if (lab < 0 || lab >= k) throw ShapeError("cross_entropy: label out of range");

    T total = T(0);
    for (int64_t i = 0; i < m; ++i) {
        if (mask && !(*mask)[static_cast<size_t>(i)]) continue;
        T mx = lv[i * k];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, lv[i * k + j]);
        T lse = T(0);
        for (int64_t j = 0; j < k; ++j) lse += std::exp(lv[i * k + j] - mx);
        lse = std::log(lse) + mx;
        total += lse - lv[i * k + labels[static_cast<size_t>(i)]];
    }
    Tensor<T> y = Tensor<T>::scalar(total / static_cast<T>(m));
    const int li = logits.id;
    std::vector<uint8_t> mcopy = mask ? *mask : std::vector<uint8_t>();
    Var out{push(std::move(y), nodes_[static_cast<size_t>(li)].needs_grad,
                 [li, labels, mcopy = std::move(mcopy), m, k](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(li)].needs_grad) return;
                     const T g = t.grads_[static_cast<size_t>(self)][0] / static_cast<T>(m);
                     const Tensor<T>& lv = t.nodes_[static_cast<size_t>(li)].value;
                     Tensor<T>& acc = t.grad_buf(li);
                     for (int64_t i = 0; i < m; ++i) {
                         if (!mcopy.empty() && !mcopy[static_cast<size_t>(i)]) continue;
                         T mx = lv[i * k];
                         for (int64_t j = 1; j < k; ++j) mx = std::max(mx, lv[i * k + j]);
                         T denom = T(0);
                         for (int64_t j = 0; j < k; ++j) denom += std::exp(lv[i * k + j] - mx);
                         for (int64_t j = 0; j < k; ++j) {
                             const T p = std::exp(lv[i * k + j] - mx) / denom;
                             const T onehot =
                                 (j == labels[static_cast<size_t>(i)]) ? T(1) : T(0);
                             acc[i * k + j] += g * (p - onehot);
                         }
                     }
                 })};
    check_finite(out.id, "cross_entropy");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::dice_loss(Var pred, const Tensor<T>& target, T eps) {
    check(pred, "dice_loss");
    const Tensor<T>& pv = value(pred);
    if (pv.shape() != target.shape())
        throw ShapeError("dice_loss: prediction " + shape_str(pv.shape()) + " vs target " +
                         shape_str(target.shape()));
    const int64_t m = pv.dim(0);
    const int64_t per = pv.numel() / m;
    std::vector<T> numer(static_cast<size_t>(m)), denom(static_cast<size_t>(m));
    T loss = T(0);
    for (int64_t i = 0; i < m; ++i) {
        T inter = T(0), sp = T(0), st = T(0);
        const T* pp = pv.data() + i * per;
        const T* tp = target.data() + i * per;
        for (int64_t j = 0; j < per; ++j) {
            inter += pp[j] * tp[j];
            sp += pp[j];
            st += tp[j];
        }
        numer[static_cast<size_t>(i)] = T(2) * inter + eps;
        denom[static_cast<size_t>(i)] = sp + st + eps;
        loss += T(1) - numer[static_cast<size_t>(i)] / denom[static_cast<size_t>(i)];
    }
    Tensor<T> y = Tensor<T>::scalar(loss / static_cast<T>(m));
    const int pi = pred.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(pi)].needs_grad,
                 [pi, target, numer = std::move(numer), denom = std::move(denom), m,
                  per](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(pi)].needs_grad) return;
                     const T g = t.grads_[static_cast<size_t>(self)][0] / static_cast<T>(m);
                     Tensor<T>& acc = t.grad_buf(pi);
                     for (int64_t i = 0; i < m; ++i) {
                         const T n_i = numer[static_cast<size_t>(i)];
                         const T d_i = denom[static_cast<size_t>(i)];
                         const T* tp = target.data() + i * per;
                         T* ap = acc.data() + i * per;
                         // d/dp [1 - n/d] = -(2*t*d - n)/d^2
                         for (int64_t j = 0; j < per; ++j)
                             ap[j] += g * (n_i - T(2) * tp[j] * d_i) / (d_i * d_i);
                     }
                 })};
    check_finite(out.id, "dice_loss");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::kl_consistency(const Tensor<T>& target, Var pred) {
    check(pred, "kl_consistency");
    const Tensor<T>& qv = value(pred);
    if (qv.shape() != target.shape())
        throw ShapeError("kl_consistency: prediction " + shape_str(qv.shape()) + " vs target " +
                         shape_str(target.shape()));
    const T lo = T(1e-6), hi = T(1) - T(1e-6);
    const int64_t n = qv.numel();
    T total = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T p = std::clamp(target[i], lo, hi);
        const T q = std::clamp(qv[i], lo, hi);
        total += p * std::log(p / q) + (T(1) - p) * std::log((T(1) - p) / (T(1) - q));
    }
    Tensor<T> y = Tensor<T>::scalar(total / static_cast<T>(n));
    const int qi = pred.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(qi)].needs_grad,
                 [qi, target, lo, hi, n](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(qi)].needs_grad) return;
                     const T g = t.grads_[static_cast<size_t>(self)][0] / static_cast<T>(n);
                     const Tensor<T>& qv = t.nodes_[static_cast<size_t>(qi)].value;
                     Tensor<T>& acc = t.grad_buf(qi);
                     for (int64_t i = 0; i < n; ++i) {
                         if (qv[i] <= lo || qv[i] >= hi) continue;  // clamped: no gradient
                         const T p = std::clamp(target[i], lo, hi);
                         acc[i] += g * (-p / qv[i] + (T(1) - p) / (T(1) - qv[i]));
                     }
                 })};
    check_finite(out.id, "kl_consistency");
    return out;
}

// ---- algebra -----------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
    check(a, "add");
    check(b, "add");
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv))
        throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> y(av.shape());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
    const int ai = a.id, bi = b.id;
    const bool needs = nodes_[static_cast<size_t>(ai)].needs_grad ||
                       nodes_[static_cast<size_t>(bi)].needs_grad;
    Var out{push(std::move(y), needs, [ai, bi](Tape& t, int self) {
        const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
        if (t.nodes_[static_cast<size_t>(ai)].needs_grad) {
            Tensor<T>& acc = t.grad_buf(ai);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gy[i];
        }
        if (t.nodes_[static_cast<size_t>(bi)].needs_grad) {
            Tensor<T>& acc = t.grad_buf(bi);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gy[i];
        }
    })};
    check_finite(out.id, "add");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
    check(a, "mul");
    check(b, "mul");
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv))
        throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> y(av.shape());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
    const int ai = a.id, bi = b.id;
    const bool needs = nodes_[static_cast<size_t>(ai)].needs_grad ||
                       nodes_[static_cast<size_t>(bi)].needs_grad;
    Var out{push(std::move(y), needs, [ai, bi](Tape& t, int self) {
        const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
        if (t.nodes_[static_cast<size_t>(ai)].needs_grad) {
            const Tensor<T>& bv = t.nodes_[static_cast<size_t>(bi)].value;
            Tensor<T>& acc = t.grad_buf(ai);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gy[i] * bv[i];
        }
        if (t.nodes_[static_cast<size_t>(bi)].needs_grad) {
            const Tensor<T>& av = t.nodes_[static_cast<size_t>(ai)].value;
            Tensor<T>& acc = t.grad_buf(bi);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gy[i] * av[i];
        }
    })};
    check_finite(out.id, "mul");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var a, T c) {
    check(a, "scale");
    const Tensor<T>& av = value(a);
    Tensor<T> y(av.shape());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] * c;
    const int ai = a.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(ai)].needs_grad,
                 [ai, c](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(ai)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(ai);
                     for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gy[i] * c;
                 })};
    check_finite(out.id, "scale");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::sum(Var x) {
    check(x, "sum");
    const Tensor<T>& xv = value(x);
    T s = T(0);
    for (int64_t i = 0; i < xv.numel(); ++i) s += xv[i];
    const int xi = x.id;
    Var out{push(Tensor<T>::scalar(s), nodes_[static_cast<size_t>(xi)].needs_grad,
                 [xi](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(xi)].needs_grad) return;
                     const T g = t.grads_[static_cast<size_t>(self)][0];
                     Tensor<T>& acc = t.grad_buf(xi);
                     for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g;
                 })};
    check_finite(out.id, "sum");
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mean(Var x) {
    const int64_t n = value(x).numel();
    return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::gather_rows(Var mat, const std::vector<int>& col) {
    check(mat, "gather_rows");
    const Tensor<T>& mv = value(mat);
    expect_rank(mv, 2, "gather_rows input");
    const int64_t m = mv.dim(0), k = mv.dim(1);
    if (static_cast<int64_t>(col.size()) != m) throw ShapeError("gather_rows: index length");
    Tensor<T> y({m});
    for (int64_t i = 0; i < m; ++i) {
        const int c = col[static_cast<size_t>(i)];
        if (c < 0 || c >= k) throw ShapeError("gather_rows: index out of range");
        y[i] = mv[i * k + c];
    }
    const int mi = mat.id;
    Var out{push(std::move(y), nodes_[static_cast<size_t>(mi)].needs_grad,
                 [mi, col, k](Tape& t, int self) {
                     if (!t.nodes_[static_cast<size_t>(mi)].needs_grad) return;
                     const Tensor<T>& gy = t.grads_[static_cast<size_t>(self)];
                     Tensor<T>& acc = t.grad_buf(mi);
                     for (int64_t i = 0; i < gy.numel(); ++i)
                         acc[i * k + col[static_cast<size_t>(i)]] += gy[i];
                 })};
    check_finite(out.id, "gather_rows");
    return out;
}

// ---- backward -----------------------------------------------------------------------

template <typename T>
void Tape<T>::backward(Var root) {
    check(root, "backward");
    const Node& r = nodes_[static_cast<size_t>(root.id)];
    if (r.value.numel() != 1)
        throw ShapeError("backward: root must be scalar, got " + shape_str(r.value.shape()));
    if (!r.needs_grad)
        throw ShapeError("backward: root is detached from all differentiable leaves");
    for (auto& g : grads_) g = Tensor<T>();
    grad_buf(root.id)[0] = T(1);
    for (int i = root.id; i >= 0; --i) {
        const Node& node = nodes_[static_cast<size_t>(i)];
        if (!node.backprop || !node.needs_grad) continue;
        if (!has_grad(i)) continue;  // nothing flowed here
        node.backprop(*this, i);
    }
}

// ---- finite differences ----------------------------------------------------------------

double finite_diff_check(const std::function<typename Tape<double>::Var(
                             Tape<double>&, typename Tape<double>::Var)>& f,
                         const Tensor<double>& x, double step) {
    // analytic gradient
    Tensor<double> analytic;
    {
        Tape<double> tape;
        auto xv = tape.leaf(x);
        auto y = f(tape, xv);
        if (tape.value(y).numel() != 1) throw ShapeError("finite_diff_check: f must be scalar");
        tape.backward(y);
        analytic = tape.grad(xv);
    }
    auto eval = [&](const Tensor<double>& point) {
        Tape<double> tape;
        auto xv = tape.leaf(point);
        auto y = f(tape, xv);
        return tape.value(y)[0];
    };
    double max_rel = 0.0;
    Tensor<double> probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = eval(probe);
        probe[i] = orig - step;
        const double down = eval(probe);
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace multimix
