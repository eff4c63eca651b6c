#pragma once

// Central finite-difference verification of tape gradients, 64-bit only.

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "nrx/rng.hpp"
#include "nrx/tensor.hpp"

namespace nrx {

struct FdReport {
    double max_rel = 0.0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t checked = 0;

    bool pass(double tol) const { return max_rel < tol; }
};

// |a-n| relative to the larger magnitude, floored so near-zero gradients are
// judged on absolute agreement instead.
inline double fd_rel_err(double analytic, double numeric, double floor_mag = 1e-4) {
    const double d = std::abs(analytic - numeric);
    const double m = std::max({std::abs(analytic), std::abs(numeric), floor_mag});
    return d / m;
}

// loss_fn re-runs the forward pass on the params' current values and returns
// the scalar loss. Analytic gradients must already sit in params[i].grad().
template <class LossFn>
FdReport fd_check(LossFn&& loss_fn, std::vector<Tensor<double>>& params,
                  const std::vector<std::pair<std::size_t, std::size_t>>& picks,
                  double eps = 1e-5, double floor_mag = 1e-4) {
    FdReport rep;
    for (const auto& [pi, ei] : picks) {
        auto& val = params[pi].value();
        const double keep = val[ei];
        val[ei] = keep + eps;
        const double fp = loss_fn();
        val[ei] = keep - eps;
        const double fm = loss_fn();
        val[ei] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = params[pi].grad()[ei];
        const double re = fd_rel_err(analytic, numeric, floor_mag);
        if (re > rep.max_rel) {
            rep.max_rel = re;
            rep.analytic_at_worst = analytic;
            rep.numeric_at_worst = numeric;
        }
        ++rep.checked;
    }
    return rep;
}

inline std::vector<std::pair<std::size_t, std::size_t>> all_picks(
    const std::vector<Tensor<double>>& params) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].numel(); ++i) picks.emplace_back(p, i);
    return picks;
}

// At least one element per parameter, plus a random share of the rest.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_picks(
    const std::vector<Tensor<double>>& params, double fraction, Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::size_t n = params[p].numel();
        std::size_t want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
        want = std::max<std::size_t>(want, 1);
        for (std::size_t k = 0; k < want; ++k) picks.emplace_back(p, rng.uint(n));
    }
    return picks;
}

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.value()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace nrx
