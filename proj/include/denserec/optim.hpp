#pragma once

#include <cmath>
#include <string>

#include "denserec/autograd.hpp"
#include "denserec/errors.hpp"

namespace denserec {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam without weight decay; zeroes the gradient afterwards.
inline void adam_step(Parameter& p, const AdamConfig& cfg) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
        if (!std::isfinite(p.grad[i])) {
            throw numeric_error("adam_step: non-finite gradient in parameter '" + p.name + "' at element " +
                                std::to_string(i));
        }
    }
    p.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(p.step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(p.step_count));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
        p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = p.m[i] / bc1;
        const double v_hat = p.v[i] / bc2;
        p.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    p.zero_grad();
}

}  // namespace denserec
