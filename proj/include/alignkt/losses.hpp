#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "alignkt/numcore/ops.hpp"

namespace alignkt {

inline constexpr double kProbClamp = 1e-7;

// Mean binary cross-entropy over valid entries of a column of probabilities:
//   -[r log p + (1 - r) log(1 - p)], p clamped to [1e-7, 1 - 1e-7].
inline nc::Tensor bce_loss(const nc::Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> valid) {
    if (pred.size() != target.size() || pred.size() != valid.size())
        throw std::invalid_argument("bce_loss: prediction/target/mask lengths differ");
    std::size_t count = 0;
    for (auto v : valid) count += v ? 1 : 0;
    if (count == 0) throw std::invalid_argument("bce_loss: no valid targets");
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<double> tgt(target.begin(), target.end());
    std::vector<std::uint8_t> mask(valid.begin(), valid.end());
    double total = 0.0;
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (!mask[i]) continue;
        const double p = std::clamp(pred.value()[i], kProbClamp, 1.0 - kProbClamp);
        total -= tgt[i] * std::log(p) + (1.0 - tgt[i]) * std::log(1.0 - p);
    }
    return nc::Tensor::make(nc::Array::matrix(1, 1, total * inv), "bce_loss", {pred},
                            [tgt = std::move(tgt), mask = std::move(mask), inv](nc::detail::Node& n) {
                                const auto& pv = n.parents[0]->value;
                                if (auto* g = nc::detail::grad_of(n, 0))
                                    for (std::size_t i = 0; i < tgt.size(); ++i) {
                                        const double p = pv[i];
                                        if (!mask[i] || p < kProbClamp || p > 1.0 - kProbClamp) continue;
                                        g[i] += n.grad[0] * inv * (-tgt[i] / p + (1.0 - tgt[i]) / (1.0 - p));
                                    }
                            });
}

// Two-term InfoNCE with cosine similarity, averaged over the batch:
//   -log( e^{sim(a,p)/tau} / (e^{sim(a,n)/tau} + e^{sim(a,p)/tau}) )
//   = softplus((sim(a,n) - sim(a,p)) / tau)
inline nc::Tensor infonce(const std::vector<nc::Tensor>& anchor, const std::vector<nc::Tensor>& positive,
                          const std::vector<nc::Tensor>& negative, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("infonce: tau must be positive");
    if (anchor.empty() || anchor.size() != positive.size() || anchor.size() != negative.size())
        throw std::invalid_argument("infonce: anchor/positive/negative counts differ");
    std::vector<nc::Tensor> terms;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        auto sp = nc::cosine_similarity(anchor[i], positive[i]);
        auto sn = nc::cosine_similarity(anchor[i], negative[i]);
        terms.push_back(nc::softplus(nc::scale(nc::sub(sn, sp), 1.0 / tau)));
    }
    return nc::scale(nc::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

// Scalar form of the above, used as a closed-form reference.
inline double infonce_from_sims(double sim_pos, double sim_neg, double tau) {
    const double x = (sim_neg - sim_pos) / tau;
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct LossReport {
    nc::Tensor total_tensor;
    double bce = 0.0;
    double cl_c = 0.0;
    double cl_s = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    double tau = 0.0;
};

// total = bce + lambda * (cl_c + cl_s). Undefined contrastive tensors count as 0.
inline LossReport total_loss(const nc::Tensor& bce, const nc::Tensor& cl_c, const nc::Tensor& cl_s, double lambda,
                             double tau) {
    if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
    LossReport r;
    r.bce = bce.item();
    r.cl_c = cl_c.defined() ? cl_c.item() : 0.0;
    r.cl_s = cl_s.defined() ? cl_s.item() : 0.0;
    r.lambda = lambda;
    r.tau = tau;
    r.total = r.bce + lambda * (r.cl_c + r.cl_s);
    if (cl_c.defined() && cl_s.defined() && lambda > 0.0)
        r.total_tensor = nc::add(bce, nc::scale(nc::add(cl_c, cl_s), lambda));
    else
        r.total_tensor = bce;
    return r;
}

}  // namespace alignkt
