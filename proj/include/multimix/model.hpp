#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "multimix/tape.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

// Shared-encoder U-Net with a classification head. Defaults reproduce the
// published layer table: 5 encoder double-conv blocks 16->256 channels at
// 256x256 input, 4 decoder blocks with skip concats, head 256 -> 2 logits.
// `blocks` and `base_width` scale the network down for desk-size runs; the
// bridge adds 2 channels (saliency map + image, pooled) to the first decoder
// concat.
struct ArchDescriptor {
    int extent = 256;
    int base_width = 16;
    int blocks = 5;
    int classes = 2;
    bool bridge_enabled = true;
    bool ssl_classification_enabled = true;
    bool ssl_segmentation_enabled = true;

    int channels(int block) const { return base_width << (block - 1); }  // block is 1-based
    int bottleneck_extent() const { return extent >> (blocks - 1); }
    int bridge_extent() const { return extent >> (blocks - 2); }  // first decoder concat res
    int bridge_pool_steps() const { return blocks - 2; }

    void validate() const;
};

template <typename T>
struct ModelParams {
    ArchDescriptor arch;
    std::map<std::string, Tensor<T>> tensors;  // ordered by name, stable across save/load

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : tensors) n += t.numel();
        return n;
    }
};

// Kaiming-uniform fan-in init with leaky-slope-0.2 gain for weights, zero
// biases. Each parameter draws from its own stream seeded by (seed, name), so
// shared layers get identical values across ablation variants.
template <typename T>
ModelParams<T> init_params(uint64_t seed, const ArchDescriptor& arch);

template <typename T>
struct ForwardCache {
    using Var = typename Tape<T>::Var;
    std::vector<Var> skips;  // pre-pool outputs of blocks 1..blocks-1
    Var bottleneck;          // pre-pool output of the last block
    Var pooled;              // post-pool output of the last block (head input)
};

// Binds one parameter set onto one tape: pushes every parameter as a leaf
// (or constant when grads are not wanted) and exposes the forward passes.
template <typename T>
class MultiMixNet {
  public:
    using Var = typename Tape<T>::Var;

    MultiMixNet(Tape<T>& tape, const ModelParams<T>& params, bool params_need_grad);

    ForwardCache<T> encode(Var x, Mode mode, Rng& rng) const;
    Var classify(const ForwardCache<T>& cache) const;
    // bridge must be present iff the architecture has the bridge enabled
    Var decode(const ForwardCache<T>& cache, std::optional<Var> bridge, Mode mode,
               Rng& rng) const;

    Var param(const std::string& name) const;
    const std::map<std::string, Var>& param_vars() const { return vars_; }
    const ArchDescriptor& arch() const { return arch_; }
    Tape<T>& tape() const { return *tape_; }

  private:
    Var double_conv(Var x, const std::string& prefix) const;

    Tape<T>* tape_;
    ArchDescriptor arch_;
    std::map<std::string, Var> vars_;
};

// The four minibatch streams of one training step. Classification images are
// expected pre-augmented by the caller when training.
template <typename T>
struct Batch {
    Tensor<T> cls_images;  // [m,1,S,S]
    std::vector<int> cls_labels;
    Tensor<T> seg_images;  // [m,1,S,S]
    Tensor<T> seg_masks;   // [m,1,S,S], binary
    Tensor<T> seg_unlabeled_images;  // may be empty
};

template <typename T>
struct JointForward {
    using Var = typename Tape<T>::Var;
    Var cls_logits;      // predictions for the labeled classification stream
    Var seg_pred;        // mask probabilities for the labeled segmentation stream
    Var seg_pred_unlabeled;  // invalid when the unlabeled stream is absent/disabled
    // classification logits of the segmentation streams, from the (detached)
    // saliency passes; empty when the bridge is off
    Tensor<T> seg_cls_logits;
    Tensor<T> seg_cls_logits_unlabeled;
    Tensor<T> saliency;            // y for the labeled segmentation stream
    Tensor<T> saliency_unlabeled;  // y for the unlabeled segmentation stream
};

// Runs the labeled classification forward plus the full segmentation path
// (saliency -> bridge -> decode) for both segmentation streams. step_seed
// derives the dropout streams for each pass.
template <typename T>
JointForward<T> forward_joint(Tape<T>& tape, const ModelParams<T>& params, const Batch<T>& batch,
                              Mode mode, uint64_t step_seed, bool params_need_grad = true);

}  // namespace multimix
