#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "p3d/autograd.h"

namespace p3d {

/// Builds a scalar from `x` on the given graph.
using ScalarFn = std::function<Var(Graph&, Var x)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool finite = true;
    std::string message;  // set when a non-finite value was encountered
};

/// Compares reverse-mode gradients of `f` at `x` with central differences.
///
/// The error per coordinate is |g_analytic - g_fd| / max(1, |g_fd|). When
/// `coords` is given only those coordinates are checked.
GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor& x, float h,
                                        const std::optional<std::vector<std::size_t>>& coords = std::nullopt);

}  // namespace p3d
