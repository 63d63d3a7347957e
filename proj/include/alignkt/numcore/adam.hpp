#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "alignkt/numcore/params.hpp"

namespace alignkt::nc {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;

    AdamState() = default;
    AdamState(const ParamStore& params, AdamConfig cfg) : config(cfg) {
        if (cfg.lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
        if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
            throw std::invalid_argument("Adam: betas must lie in [0, 1)");
        for (const auto& e : params.entries()) {
            m.emplace_back(e.tensor.size(), 0.0);
            v.emplace_back(e.tensor.size(), 0.0);
        }
    }
};

// Bias-corrected Adam update on every trainable parameter, then zeroes gradients.
inline void adam_step(ParamStore& params, AdamState& state) {
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
    for (const auto& e : params.entries())
        if (e.trainable && !e.tensor.has_grad())
            throw std::runtime_error("adam_step: missing gradient for trainable parameter '" + e.name + "'");

    ++state.step;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(c.beta1, t);
    const double corr2 = 1.0 - std::pow(c.beta2, t);
    auto& entries = params.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        auto& e = entries[p];
        if (!e.trainable) continue;
        const auto& g = e.tensor.grad();
        auto& w = e.tensor.mutable_value();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / corr1;
            const double v_hat = v[i] / corr2;
            w[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
    params.zero_grad();
}

}  // namespace alignkt::nc
