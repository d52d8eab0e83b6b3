#pragma once

// Central finite-difference gradient oracle, independent of the tape:
// it re-runs the forward closure at perturbed inputs and never reads
// autodiff state.

#include <cmath>
#include <functional>
#include <vector>

#include "umg/rng.hpp"
#include "umg/tensor.hpp"

namespace umg::test {

struct GradCheckResult {
    double max_rel_err = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
    size_t worst_index = 0;
};

// forward: maps flat input values -> scalar loss. analytic: gradient to test.
inline GradCheckResult finite_diff_check(std::vector<real> x,
                                         const std::function<real(const std::vector<real>&)>& forward,
                                         const std::vector<real>& analytic,
                                         double h = 1e-5) {
    GradCheckResult r;
    for (size_t i = 0; i < x.size(); ++i) {
        const real x0 = x[i];
        const double step = h * std::max(1.0, std::abs(static_cast<double>(x0)));
        x[i] = x0 + static_cast<real>(step);
        const double fp = forward(x);
        x[i] = x0 - static_cast<real>(step);
        const double fm = forward(x);
        x[i] = x0;
        const double num = (fp - fm) / (2 * step);
        const double ana = static_cast<double>(analytic[i]);
        const double scale = std::max({std::abs(num), std::abs(ana), 1e-6});
        const double rel = std::abs(num - ana) / scale;
        if (rel > r.max_rel_err) {
            r.max_rel_err = rel;
            r.worst_analytic = ana;
            r.worst_numeric = num;
            r.worst_index = i;
        }
    }
    return r;
}

inline std::vector<real> random_values(size_t n, uint64_t seed, double lo = -1, double hi = 1) {
    SeededRng rng(seed);
    std::vector<real> v(n);
    for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
    return v;
}

}  // namespace umg::test
