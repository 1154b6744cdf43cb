#include "p3d/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "p3d/error.h"

namespace p3d {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    Graph g;
    Var xv = g.constant_ref(x);
    return f(g, xv).value().item();
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor& x, float h,
                                        const std::optional<std::vector<std::size_t>>& coords) {
    if (!(h > 0.0f)) throw ContractViolation("finite_difference_check: step must be positive");

    Tensor analytic;
    {
        Graph g;
        Var xv = g.parameter(0, x);
        Var out = f(g, xv);
        GradientMap grads = g.backward(out);
        analytic = grads.get(0, x.shape());
    }

    std::vector<std::size_t> all;
    if (!coords) {
        all.resize(x.numel());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    }
    const std::vector<std::size_t>& indices = coords ? *coords : all;

    GradCheckResult result;
    Tensor probe = x;
    for (std::size_t i : indices) {
        if (i >= x.numel()) throw ContractViolation("finite_difference_check: coordinate out of range");
        const float x0 = x[i];
        const float xp = x0 + h;
        const float xm = x0 - h;
        probe[i] = xp;
        const double fp = evaluate(f, probe);
        probe[i] = xm;
        const double fm = evaluate(f, probe);
        probe[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
            result.finite = false;
            result.worst_index = i;
            result.max_rel_error = std::numeric_limits<double>::infinity();
            result.message = "non-finite value at coordinate " + std::to_string(i);
            return result;
        }
        // The representable step differs slightly from 2h in float.
        const double fd = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
        if (err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_index = i;
        }
    }
    return result;
}

}  // namespace p3d
