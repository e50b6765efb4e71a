#include "multimix/optim.hpp"

#include <cmath>

#include "multimix/errors.hpp"

namespace multimix {

void adam_step(ModelParams<float>& params, const std::map<std::string, Tensor<float>>& grads,
               AdamState& state, double lr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, param] : params.tensors) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor<float>& g = git->second;
        if (!g.same_shape(param)) throw ShapeError("adam_step: gradient shape mismatch for " + name);
        if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient for " + name);
        auto& m = state.m.try_emplace(name, Tensor<float>(param.shape())).first->second;
        auto& v = state.v.try_emplace(name, Tensor<float>(param.shape())).first->second;
        for (int64_t i = 0; i < param.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            param[i] = static_cast<float>(param[i] - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
        if (!param.all_finite()) throw NumericError("adam_step: non-finite update for " + name);
    }
}

double lr_schedule(int64_t epoch, double base_lr, double factor, int64_t every) {
    if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
    if (every <= 0) return base_lr;
    return base_lr * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace multimix
