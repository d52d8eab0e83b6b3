#pragma once

#include <vector>

#include "umg/tensor.hpp"

namespace umg {

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) and RMSProp (decay 0.9, eps 1e-10).
// Accumulators mirror parameter shapes; updates are elementwise and bitwise
// deterministic for a fixed step sequence.
struct OptimizerState {
    enum Kind { adam, rmsprop };
    Kind kind = adam;
    real lr = real(1e-4);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real decay = real(0.9);       // rmsprop
    real rms_eps = real(1e-10);   // rmsprop
    int64_t step = 0;

    static OptimizerState make_adam(real lr);
    static OptimizerState make_rmsprop(real lr);

    std::vector<std::vector<real>> m;  // first moment / rms accumulator
    std::vector<std::vector<real>> v;  // second moment (adam only)
};

/// Applies one update to params in place. grads[i] must match params[i].
void optimizer_step(OptimizerState& state, const std::vector<Tensor*>& params,
                    const std::vector<std::vector<real>>& grads);

}  // namespace umg
