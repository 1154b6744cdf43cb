#pragma once

#include <cstdint>
#include <span>

#include "p3d/autograd.h"
#include "p3d/parameters.h"
#include "p3d/tensor.h"

namespace p3d {

struct AdamConfig {
    float learning_rate = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
};

/// Moment accumulators for one parameter tensor.
struct AdamState {
    Tensor m;
    Tensor v;
    std::uint64_t step = 0;

    static AdamState for_shape(const Shape& shape) { return {Tensor(shape), Tensor(shape), 0}; }
};

/// One bias-corrected adaptive-moment step on a single tensor.
void adam_update(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config);

/// Steps only the listed parameters; ids without a gradient are stepped with a zero gradient.
void adam_update(ParameterSet& params, const GradientMap& grads, std::span<AdamState> states,
                 std::span<const ParamId> ids, const AdamConfig& config);

}  // namespace p3d
