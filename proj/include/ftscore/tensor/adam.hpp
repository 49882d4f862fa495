#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ftscore/error.hpp"
#include "ftscore/tensor/tensor.hpp"

namespace ftscore {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

/// Moments are created lazily on the first step, shaped like the parameters.
struct AdamState {
    AdamConfig config;
    std::vector<Tensor> first;
    std::vector<Tensor> second;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update in place. `names` labels parameters in diagnostics.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                      AdamState& state, std::span<const std::string> names = {})
{
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    auto label = [&](std::size_t i) {
        return i < names.size() ? names[i] : "parameter #" + std::to_string(i);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape()) {
            throw ShapeError("adam_step: gradient shape " + shape_str(grads[i].shape()) +
                             " does not match " + label(i) + " " + shape_str(params[i]->shape()));
        }
        if (!grads[i].all_finite()) {
            throw DegenerateError("adam_step: non-finite gradient for " + label(i));
        }
    }
    if (state.first.empty()) {
        for (Tensor* p : params) {
            state.first.emplace_back(p->shape());
            state.second.emplace_back(p->shape());
        }
    }
    if (state.first.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state was built for a different parameter list");
    }
    ++state.step;
    const AdamConfig& c = state.config;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(c.beta1, t);
    const double correct2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& m = state.first[i];
        Tensor& v = state.second[i];
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double m_hat = m[j] / correct1;
            const double v_hat = v[j] / correct2;
            p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

} // namespace ftscore
