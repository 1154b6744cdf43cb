#include "p3d/adam.h"

#include <cmath>

#include "p3d/error.h"

namespace p3d {

void adam_update(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
    if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v))
        throw ContractViolation("adam_update: shape mismatch for parameter " + shape_to_string(param.shape()) +
                                " gradient " + shape_to_string(grad.shape()) + " moments " +
                                shape_to_string(state.m.shape()));
    ++state.step;
    const double t = static_cast<double>(state.step);
    const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
    const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));
    const float b1 = config.beta1, b2 = config.beta2;

    float* p = param.raw();
    float* m = state.m.raw();
    float* v = state.v.raw();
    const float* g = grad.raw();
    for (std::size_t i = 0; i < param.numel(); ++i) {
        m[i] = b1 * m[i] + (1.0f - b1) * g[i];
        v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
        const float m_hat = m[i] / c1;
        const float v_hat = v[i] / c2;
        p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

void adam_update(ParameterSet& params, const GradientMap& grads, std::span<AdamState> states,
                 std::span<const ParamId> ids, const AdamConfig& config) {
    if (states.size() != params.size())
        throw ContractViolation("adam_update: " + std::to_string(states.size()) + " optimizer states for " +
                                std::to_string(params.size()) + " parameters");
    for (ParamId id : ids) {
        Tensor& value = params.value(id);
        if (const Tensor* g = grads.find(id)) {
            adam_update(value, *g, states[id], config);
        } else {
            adam_update(value, Tensor(value.shape()), states[id], config);
        }
    }
}

}  // namespace p3d
