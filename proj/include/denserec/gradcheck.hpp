#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "denserec/autograd.hpp"
#include "denserec/rng.hpp"

namespace denserec {

struct GradCheckOptions {
    double step = 1e-5;
    // Coordinates per parameter tensor; tensors at or under the cap are
    // checked exhaustively.
    int max_coords_per_tensor = 48;
    // Relative-error denominator floor. Keeps finite-difference noise on
    // near-zero gradients from registering as large relative errors.
    double denom_floor = 1e-3;
};

struct GradCheckWorst {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

// Central finite differences against the analytic gradient.
//
// loss_fn(accumulate_grads) must be deterministic (dropout off, fixed RNG
// state, fixed path masks): it returns the scalar loss and, when asked,
// accumulates gradients into the given parameters. Gradients are zeroed
// here before the analytic pass. Returns the worst relative error over the
// sampled coordinates; `worst` (optional) reports where it occurred.
inline double finite_difference_check(const std::function<double(bool)>& loss_fn,
                                      std::span<Parameter* const> params, RngStream& rng,
                                      const GradCheckOptions& opts = {}, GradCheckWorst* worst = nullptr) {
    for (Parameter* p : params) p->zero_grad();
    loss_fn(/*accumulate_grads=*/true);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) {
        analytic.emplace_back(p->grad.data(), p->grad.data() + p->grad.size());
        p->zero_grad();
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        const std::size_t n = p.value.size();
        std::vector<std::size_t> coords;
        if (n <= std::size_t(opts.max_coords_per_tensor)) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords.reserve(std::size_t(opts.max_coords_per_tensor));
            for (int i = 0; i < opts.max_coords_per_tensor; ++i) {
                coords.push_back(std::size_t(rng.next_int(int(n))));
            }
        }
        for (std::size_t ci : coords) {
            const double saved = p.value[ci];
            p.value[ci] = saved + opts.step;
            const double f_plus = loss_fn(false);
            p.value[ci] = saved - opts.step;
            const double f_minus = loss_fn(false);
            p.value[ci] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * opts.step);
            const double a = analytic[pi][ci];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), opts.denom_floor});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > max_rel) {
                max_rel = rel;
                if (worst != nullptr) *worst = {p.name, ci, a, numeric, rel};
            }
        }
    }
    return max_rel;
}

}  // namespace denserec
