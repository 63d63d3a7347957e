#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/numcore/rng.hpp"
#include "alignkt/numcore/tensor.hpp"

// Differentiable operations over rank-2 tensors. Scalars are 1x1 (or rank 0).

namespace alignkt::nc {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMajor>;
using CMapMat = Eigen::Map<const RowMajor>;

// Visibility mask over a score matrix, row-major, 1 = visible.
struct Mask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> visible;

    Mask() = default;
    Mask(std::size_t r, std::size_t c, bool fill = true) : rows(r), cols(c), visible(r * c, fill ? 1 : 0) {}
    bool at(std::size_t r, std::size_t c) const { return visible[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { visible[r * cols + c] = v ? 1 : 0; }
};

namespace detail {

inline double* grad_of(Node& n, std::size_t parent) {
    auto& p = *n.parents[parent];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

inline CMapMat cmap(const Array& a) { return CMapMat(a.ptr(), a.rows(), a.cols()); }
inline CMapMat cmap(const std::vector<double>& g, std::size_t r, std::size_t c) { return CMapMat(g.data(), r, c); }

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

inline Array like(const Tensor& a) { return Array::matrix(a.rows(), a.cols()); }

}  // namespace detail

inline Tensor constant(Array a) { return Tensor(std::move(a), false); }
inline Tensor parameter(Array a) { return Tensor(std::move(a), true); }

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "add");
    Array out = detail::like(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return Tensor::make(std::move(out), "add", {a, b}, [](detail::Node& n) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = detail::grad_of(n, k))
                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "sub");
    Array out = detail::like(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return Tensor::make(std::move(out), "sub", {a, b}, [](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        if (auto* g = detail::grad_of(n, 1))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "mul");
    Array out = detail::like(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return Tensor::make(std::move(out), "mul", {a, b}, [](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
        if (auto* g = detail::grad_of(n, 1))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    Array out = detail::like(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
    return Tensor::make(std::move(out), "scale", {a}, [s](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * s;
    });
}

// x (n x m) + b (1 x m) broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& b) {
    if (b.size() != x.cols())
        throw std::invalid_argument("add_row: bias of size " + std::to_string(b.size()) + " for " +
                                    std::to_string(x.cols()) + " columns");
    Array out = detail::like(x);
    const std::size_t m = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) = x.value().at(r, c) + b.value()[c];
    return Tensor::make(std::move(out), "add_row", {x, b}, [m](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        if (auto* g = detail::grad_of(n, 1))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % m] += n.grad[i];
    });
}

// Row r of x scaled by v[r]; v is n x 1.
inline Tensor mul_rows(const Tensor& x, const Tensor& v) {
    if (v.size() != x.rows()) throw std::invalid_argument("mul_rows: scale vector length mismatch");
    Array out = detail::like(x);
    const std::size_t m = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) = x.value().at(r, c) * v.value()[r];
    return Tensor::make(std::move(out), "mul_rows", {x, v}, [m](detail::Node& n) {
        const auto& xv = n.parents[0]->value;
        const auto& vv = n.parents[1]->value;
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * vv[i / m];
        if (auto* g = detail::grad_of(n, 1))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i / m] += n.grad[i] * xv[i];
    });
}

// a (n x k) . b (k x m)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Array out = Array::matrix(a.rows(), b.cols());
    MapMat(out.ptr(), a.rows(), b.cols()).noalias() = detail::cmap(a.value()) * detail::cmap(b.value());
    return Tensor::make(std::move(out), "matmul", {a, b}, [](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        auto g = detail::cmap(n.grad, av.rows(), bv.cols());
        if (auto* ga = detail::grad_of(n, 0))
            MapMat(ga, av.rows(), av.cols()).noalias() += g * detail::cmap(bv).transpose();
        if (auto* gb = detail::grad_of(n, 1))
            MapMat(gb, bv.rows(), bv.cols()).noalias() += detail::cmap(av).transpose() * g;
    });
}

// a (n x k) . b^T where b is (m x k)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                                    "^T");
    Array out = Array::matrix(a.rows(), b.rows());
    MapMat(out.ptr(), a.rows(), b.rows()).noalias() = detail::cmap(a.value()) * detail::cmap(b.value()).transpose();
    return Tensor::make(std::move(out), "matmul_nt", {a, b}, [](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        auto g = detail::cmap(n.grad, av.rows(), bv.rows());
        if (auto* ga = detail::grad_of(n, 0))
            MapMat(ga, av.rows(), av.cols()).noalias() += g * detail::cmap(bv);
        if (auto* gb = detail::grad_of(n, 1))
            MapMat(gb, bv.rows(), bv.cols()).noalias() += g.transpose() * detail::cmap(av);
    });
}

// Rows of `table` selected by `ids`.
inline Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    const std::size_t m = table.cols();
    const std::size_t n_rows = table.rows();
    Array out = Array::matrix(ids.size(), m);
    std::vector<int> idx(ids.begin(), ids.end());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= n_rows)
            throw std::out_of_range("gather_rows: id " + std::to_string(idx[r]) + " outside table of " +
                                    std::to_string(n_rows) + " rows");
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) = table.value().at(idx[r], c);
    }
    return Tensor::make(std::move(out), "gather_rows", {table}, [idx = std::move(idx), m](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < m; ++c) g[idx[r] * m + c] += n.grad[r * m + c];
    });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    if (start + len > x.cols()) throw std::out_of_range("slice_cols: range exceeds columns");
    const std::size_t m = x.cols();
    Array out = Array::matrix(x.rows(), len);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < len; ++c) out.at(r, c) = x.value().at(r, start + c);
    return Tensor::make(std::move(out), "slice_cols", {x}, [start, len, m](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0)) {
            const std::size_t rows = n.grad.size() / len;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < len; ++c) g[r * m + start + c] += n.grad[r * len + c];
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t rows = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
        widths.push_back(p.cols());
        total += p.cols();
    }
    Array out = Array::matrix(rows, total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) out.at(r, off + c) = p.value().at(r, c);
        off += p.cols();
    }
    return Tensor::make(std::move(out), "concat_cols", parts, [widths, total, rows](detail::Node& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (auto* g = detail::grad_of(n, k))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += n.grad[r * total + off + c];
            off += widths[k];
        }
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t m = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != m) throw std::invalid_argument("concat_rows: column count mismatch");
        total += p.rows();
    }
    Array out = Array::matrix(total, m);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<long>(off));
        off += p.size();
    }
    return Tensor::make(std::move(out), "concat_rows", parts, [](detail::Node& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            const std::size_t sz = n.parents[k]->value.size();
            if (auto* g = detail::grad_of(n, k))
                for (std::size_t i = 0; i < sz; ++i) g[i] += n.grad[off + i];
            off += sz;
        }
    });
}

// Contiguous rows [start, start + count).
inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    if (start + count > x.rows()) throw std::out_of_range("slice_rows: range exceeds rows");
    const std::size_t m = x.cols();
    Array out = Array::matrix(count, m);
    std::copy_n(x.value().data().begin() + static_cast<long>(start * m), count * m, out.data().begin());
    return Tensor::make(std::move(out), "slice_rows", {x}, [start, m](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[start * m + i] += n.grad[i];
    });
}

// Row-wise layer normalisation with learned gain and bias (both 1 x m).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const std::size_t rows = x.rows();
    const std::size_t m = x.cols();
    if (gain.size() != m || bias.size() != m) throw std::invalid_argument("layer_norm: gain/bias width mismatch");
    Array out = detail::like(x);
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < m; ++c) mean += x.value().at(r, c);
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const double d = x.value().at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < m; ++c) {
            const double h = (x.value().at(r, c) - mean) * inv_std[r];
            xhat[r * m + c] = h;
            out.at(r, c) = h * gain.value()[c] + bias.value()[c];
        }
    }
    return Tensor::make(
        std::move(out), "layer_norm", {x, gain, bias},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, m](detail::Node& n) {
            const auto& gv = n.parents[1]->value;
            if (auto* gg = detail::grad_of(n, 1))
                for (std::size_t i = 0; i < n.grad.size(); ++i) gg[i % m] += n.grad[i] * xhat[i];
            if (auto* gb = detail::grad_of(n, 2))
                for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i % m] += n.grad[i];
            if (auto* gx = detail::grad_of(n, 0)) {
                std::vector<double> dh(m);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < m; ++c) {
                        dh[c] = n.grad[r * m + c] * gv[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * xhat[r * m + c];
                    }
                    mean_dh /= static_cast<double>(m);
                    mean_dh_h /= static_cast<double>(m);
                    for (std::size_t c = 0; c < m; ++c)
                        gx[r * m + c] += inv_std[r] * (dh[c] - mean_dh - xhat[r * m + c] * mean_dh_h);
                }
            }
        });
}

inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Array out = detail::like(x);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    return Tensor::make(std::move(out), "gelu", {x}, [](detail::Node& n) {
        const auto& xv = n.parents[0]->value;
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double v = xv[i];
                const double d = 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
                g[i] += n.grad[i] * d;
            }
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    Array out = detail::like(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.value()[i]);
    return Tensor::make(std::move(out), "sigmoid", {x}, [](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double s = n.value[i];
                g[i] += n.grad[i] * s * (1.0 - s);
            }
    });
}

// log(1 + e^x), stable for large |x|.
inline Tensor softplus(const Tensor& x) {
    Array out = detail::like(x);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    }
    return Tensor::make(std::move(out), "softplus", {x}, [](detail::Node& n) {
        const auto& xv = n.parents[0]->value;
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * sigmoid_scalar(xv[i]);
    });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return Tensor::make(Array::matrix(1, 1, s), "sum", {x}, [](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0)) {
            const std::size_t sz = n.parents[0]->value.size();
            for (std::size_t i = 0; i < sz; ++i) g[i] += n.grad[0];
        }
    });
}

// Sum of 1x1 tensors.
inline Tensor add_n(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("add_n: no inputs");
    double s = 0.0;
    for (const auto& x : xs) {
        if (x.size() != 1) throw std::invalid_argument("add_n: inputs must be scalars");
        s += x.item();
    }
    return Tensor::make(Array::matrix(1, 1, s), "add_n", xs, [](detail::Node& n) {
        for (std::size_t k = 0; k < n.parents.size(); ++k)
            if (auto* g = detail::grad_of(n, k)) g[0] += n.grad[0];
    });
}

// Softmax over each row restricted to visible entries. Masked entries are 0;
// a row with no visible entry is all zeros and reported through `fully_masked`.
inline Tensor softmax_rows(const Tensor& scores, const Mask& mask, std::vector<bool>* fully_masked = nullptr) {
    const std::size_t rows = scores.rows();
    const std::size_t m = scores.cols();
    if (mask.rows != rows || mask.cols != m) throw std::invalid_argument("softmax_rows: mask shape mismatch");
    Array out = detail::like(scores);
    if (fully_masked) fully_masked->assign(rows, false);
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m; ++c)
            if (mask.at(r, c)) mx = std::max(mx, scores.value().at(r, c));
        if (!std::isfinite(mx)) {
            if (fully_masked) (*fully_masked)[r] = true;
            continue;
        }
        double z = 0.0;
        for (std::size_t c = 0; c < m; ++c)
            if (mask.at(r, c)) {
                const double e = std::exp(scores.value().at(r, c) - mx);
                out.at(r, c) = e;
                z += e;
            }
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) /= z;
    }
    return Tensor::make(std::move(out), "softmax_rows", {scores}, [rows, m](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < m; ++c) dot += n.grad[r * m + c] * n.value[r * m + c];
                for (std::size_t c = 0; c < m; ++c)
                    g[r * m + c] += n.value[r * m + c] * (n.grad[r * m + c] - dot);
            }
    });
}

// Inverted dropout; identity when rate == 0.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> keep(x.size());
    for (auto& k : keep) k = rng.uniform() < rate ? 0.0 : keep_scale;
    Array out = detail::like(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * keep[i];
    return Tensor::make(std::move(out), "dropout", {x}, [keep = std::move(keep)](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * keep[i];
    });
}

// Weighted mean of rows: sum_r w_r x_r / sum_r w_r -> 1 x m.
inline Tensor masked_mean_rows(const Tensor& x, std::span<const double> weights) {
    if (weights.size() != x.rows()) throw std::invalid_argument("masked_mean_rows: weight count mismatch");
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("masked_mean_rows: no weighted rows");
    const std::size_t m = x.cols();
    std::vector<double> w(weights.begin(), weights.end());
    for (auto& v : w) v /= total;
    Array out = Array::matrix(1, m);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < m; ++c) out[c] += w[r] * x.value().at(r, c);
    return Tensor::make(std::move(out), "masked_mean_rows", {x}, [w = std::move(w), m](detail::Node& n) {
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t r = 0; r < w.size(); ++r)
                for (std::size_t c = 0; c < m; ++c) g[r * m + c] += w[r] * n.grad[c];
    });
}

// Cosine similarity of two equally sized tensors, as a 1x1 result.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a.value()[i] * b.value()[i];
        na += a.value()[i] * a.value()[i];
        nb += b.value()[i] * b.value()[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm vector");
    const double cs = dot / (na * nb);
    return Tensor::make(Array::matrix(1, 1, cs), "cosine_similarity", {a, b}, [na, nb, cs](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        const double up = n.grad[0];
        if (auto* g = detail::grad_of(n, 0))
            for (std::size_t i = 0; i < av.size(); ++i) g[i] += up * (bv[i] / (na * nb) - cs * av[i] / (na * na));
        if (auto* g = detail::grad_of(n, 1))
            for (std::size_t i = 0; i < bv.size(); ++i) g[i] += up * (av[i] / (na * nb) - cs * bv[i] / (nb * nb));
    });
}

}  // namespace alignkt::nc
