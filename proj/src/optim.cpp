#include "umg/optim.hpp"

#include <cmath>

namespace umg {

OptimizerState OptimizerState::make_adam(real lr) {
    OptimizerState s;
    s.kind = adam;
    s.lr = lr;
    return s;
}

OptimizerState OptimizerState::make_rmsprop(real lr) {
    OptimizerState s;
    s.kind = rmsprop;
    s.lr = lr;
    return s;
}

void optimizer_step(OptimizerState& state, const std::vector<Tensor*>& params,
                    const std::vector<std::vector<real>>& grads) {
    if (params.size() != grads.size()) {
        throw DimError("optimizer_step: " + std::to_string(params.size()) + " params vs " +
                       std::to_string(grads.size()) + " grads");
    }
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->data().size(), 0);
            if (state.kind == OptimizerState::adam) state.v[i].assign(params[i]->data().size(), 0);
        }
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i]->data().size() != grads[i].size()) {
            throw DimError("optimizer_step: grad size mismatch for parameter " + std::to_string(i));
        }
    }
    state.step += 1;
    if (state.kind == OptimizerState::adam) {
        const real b1 = state.beta1, b2 = state.beta2;
        const real c1 = 1 - std::pow(b1, static_cast<real>(state.step));
        const real c2 = 1 - std::pow(b2, static_cast<real>(state.step));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i]->data();
            auto& m = state.m[i];
            auto& v = state.v[i];
            const auto& g = grads[i];
            for (size_t j = 0; j < w.size(); ++j) {
                m[j] = b1 * m[j] + (1 - b1) * g[j];
                v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
                real mhat = m[j] / c1;
                real vhat = v[j] / c2;
                w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
            }
        }
    } else {
        const real rho = state.decay;
        for (size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i]->data();
            auto& m = state.m[i];
            const auto& g = grads[i];
            for (size_t j = 0; j < w.size(); ++j) {
                m[j] = rho * m[j] + (1 - rho) * g[j] * g[j];
                w[j] -= state.lr * g[j] / std::sqrt(m[j] + state.rms_eps);
            }
        }
    }
}

}  // namespace umg
