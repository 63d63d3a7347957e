#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "alignkt/numcore/params.hpp"
#include "alignkt/numcore/rng.hpp"

namespace alignkt::nc {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckOptions {
    double h = 1e-5;
    std::size_t max_coords_per_param = 0;  // 0 = every coordinate
    std::uint64_t seed = 0;
    // Lower bound on the denominator |a| + |n|. Central differences carry
    // roughly 1e-11 of round-off at h = 1e-5, so gradients much smaller than
    // this floor cannot be resolved and would otherwise report noise.
    double abs_floor = 1e-6;
};

// Compares reverse-mode gradients of a scalar-valued computation against
// central differences. `loss` must rebuild its graph from `params` on each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, ParamStore& params,
                                  const GradCheckOptions& opt = {}) {
    if (opt.h < 1e-6 || opt.h > 1e-4) throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-4]");
    auto eval = [&] {
        const double v = loss().item();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
        return v;
    };

    params.zero_grad();
    Tensor root = loss();
    if (!std::isfinite(root.item())) throw NumericError("grad_check: non-finite loss");
    root.backward();

    GradCheckResult result;
    Rng rng(opt.seed);
    for (auto& e : params.entries()) {
        if (!e.trainable) continue;
        const Array analytic = e.tensor.grad_array();
        auto& w = e.tensor.mutable_value();
        std::vector<std::size_t> coords(w.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opt.max_coords_per_param && coords.size() > opt.max_coords_per_param) {
            rng.shuffle(coords);
            coords.resize(opt.max_coords_per_param);
        }
        for (std::size_t i : coords) {
            const double orig = w[i];
            w[i] = orig + opt.h;
            const double up = eval();
            w[i] = orig - opt.h;
            const double down = eval();
            w[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.h);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), opt.abs_floor);
            ++result.coords_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = e.name;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    params.zero_grad();
    return result;
}

}  // namespace alignkt::nc
