#pragma once

#include "multimix/model.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

// Input-gradient saliency of the argmax-class logit, |grad| min-max normalized
// per sample to [0,1] (all zeros when the gradient is constant). Runs its own
// eval-mode forward with parameters held constant; the result is detached, no
// second-order gradient ever flows through it. Also reports the class logits
// the pass produced.
template <typename T>
struct SaliencyResult {
    Tensor<T> map;     // [m,1,S,S] in [0,1]
    Tensor<T> logits;  // [m,classes]
};

template <typename T>
SaliencyResult<T> compute_saliency(const ModelParams<T>& params, const Tensor<T>& x);

// Bridge tensor of Eq-style concatenation: channel 0 the saliency map, channel
// 1 the input image, then `pool_steps` rounds of 2x2 average pooling down to
// the decoder's first concat resolution.
template <typename T>
Tensor<T> build_bridge(const Tensor<T>& saliency, const Tensor<T>& x, int pool_steps);

}  // namespace multimix
