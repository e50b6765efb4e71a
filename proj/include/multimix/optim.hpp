#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "multimix/model.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

// Adam with bias correction; moments keyed by parameter name.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::map<std::string, Tensor<float>> m;
    std::map<std::string, Tensor<float>> v;
};

// One update over every parameter that has a gradient entry. Throws
// NumericError on non-finite gradients or updates.
void adam_step(ModelParams<float>& params, const std::map<std::string, Tensor<float>>& grads,
               AdamState& state, double lr);

// lr = base * factor^floor(epoch / every); every <= 0 disables decay.
double lr_schedule(int64_t epoch, double base_lr, double factor = 0.1, int64_t every = 8);

}  // namespace multimix
