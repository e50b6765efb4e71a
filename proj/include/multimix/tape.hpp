#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "multimix/rng.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

enum class Mode { train, eval };

// Reverse-mode gradient tape. Ops append nodes in execution order, which is by
// construction a topological order, so backward() is a reverse sweep. Gradients
// accumulate across all use sites of a node. A tape is owned by one training
// context; Vars from one tape must not be mixed into another.
template <typename T>
class Tape {
  public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. Constants are never given gradients and backward skips anything
    // that only they feed.
    Var leaf(Tensor<T> value);
    Var constant(Tensor<T> value);

    const Tensor<T>& value(Var v) const;
    // Gradient of the last backward() root w.r.t. v; zeros if none flowed.
    const Tensor<T>& grad(Var v);

    size_t size() const { return nodes_.size(); }
    // Shape of node `id` in push order; ops append after their inputs, which
    // lets tests walk a forward trace row by row.
    const Shape& node_shape(int id) const { return nodes_[static_cast<size_t>(id)].value.shape(); }

    // ---- layer primitives ----
    // 3x3 stride-1 pad-1 when weight is [co,ci,3,3]; 1x1 stride-1 pad-0 when
    // weight is [co,ci,1,1].
    Var conv2d(Var x, Var w, Var b);
    Var instance_norm(Var x);  // per (sample,channel), eps 1e-5, no affine
    Var leaky_relu(Var x);     // negative slope 0.2
    Var maxpool2(Var x);       // 2x2 stride 2; ties -> first in row-major order
    Var avgpool2(Var x);       // 2x2 stride 2 mean
    Var avgpool_global(Var x); // [n,c,h,w] -> [n,c]
    Var upsample_nearest2(Var x);
    Var linear(Var x, Var w, Var b);  // x[m,in] * w[out,in]^T + b
    Var concat_channels(const std::vector<Var>& parts);
    Var softmax(Var logits);  // row-wise, max-subtracted
    Var sigmoid(Var x);
    Var dropout(Var x, double rate, Mode mode, Rng& rng);  // inverted dropout

    // ---- losses (fused forward+backward) ----
    // Mean over the full row count of -log softmax(logits)[label]; masked-out
    // rows contribute zero but still count in the denominator.
    Var cross_entropy(Var logits, const std::vector<int>& labels,
                      const std::vector<uint8_t>* mask = nullptr);
    // 1 - (2*sum(p*t)+eps)/(sum(p)+sum(t)+eps) per sample, batch mean. Target is
    // a plain tensor: no gradient flows to it.
    Var dice_loss(Var pred, const Tensor<T>& target, T eps = T(1e-6));
    // Mean per-pixel Bernoulli KL(target || pred) with both clamped to
    // [1e-6, 1-1e-6]. Target is detached by construction.
    Var kl_consistency(const Tensor<T>& target, Var pred);

    // ---- algebra ----
    Var add(Var a, Var b);           // same shape
    Var mul(Var a, Var b);           // same shape, elementwise
    Var scale(Var a, T c);
    Var sum(Var x);                  // -> scalar
    Var mean(Var x);                 // -> scalar
    Var gather_rows(Var mat, const std::vector<int>& col);  // [m,k] -> [m]

    // Reverse accumulation from a scalar root.
    void backward(Var root);

  private:
    struct Node {
        Tensor<T> value;
        std::function<void(Tape&, int)> backprop;  // nullptr for leaves
        bool needs_grad = false;
    };

    int push(Tensor<T> value, bool needs_grad, std::function<void(Tape&, int)> backprop);
    void check(Var v, const char* what) const;
    void check_finite(int id, const char* op) const;
    Tensor<T>& grad_buf(int id);  // allocate-on-demand zeros
    bool has_grad(int id) const { return !grads_[static_cast<size_t>(id)].empty(); }

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

// Central-difference check of d(f)/dx against the tape gradient. `f` receives a
// fresh tape and the leaf Var for x and must return a scalar Var on that tape.
// Returns the max relative error with denominator max(|analytic|,|numeric|,1e-8).
double finite_diff_check(const std::function<typename Tape<double>::Var(
                             Tape<double>&, typename Tape<double>::Var)>& f,
                         const Tensor<double>& x, double step);

}  // namespace multimix
