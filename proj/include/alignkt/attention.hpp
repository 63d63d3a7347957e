#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/embed.hpp"
#include "alignkt/numcore/ops.hpp"
#include "alignkt/numcore/params.hpp"
#include "alignkt/numcore/rng.hpp"

namespace alignkt {

enum class AttnKind { TCBA, NONE };
enum class MaskKind { CAU, PAD };

struct AttentionMask {
    MaskKind kind = MaskKind::PAD;
    nc::Mask visibility;
};

// Query q sees key k iff k <= q + offset and the key slot is valid.
inline AttentionMask causal_mask(std::size_t n_query, std::size_t n_key, std::span<const std::uint8_t> key_valid,
                                 long offset = 0) {
    if (key_valid.size() != n_key) throw std::invalid_argument("causal_mask: key validity length mismatch");
    AttentionMask m{MaskKind::CAU, nc::Mask(n_query, n_key, false)};
    for (std::size_t q = 0; q < n_query; ++q)
        for (std::size_t k = 0; k < n_key; ++k)
            m.visibility.set(q, k, static_cast<long>(k) <= static_cast<long>(q) + offset && key_valid[k]);
    return m;
}

inline AttentionMask padding_mask(std::size_t n_query, std::size_t n_key, std::span<const std::uint8_t> key_valid) {
    if (key_valid.size() != n_key) throw std::invalid_argument("padding_mask: key validity length mismatch");
    AttentionMask m{MaskKind::PAD, nc::Mask(n_query, n_key, false)};
    for (std::size_t q = 0; q < n_query; ++q)
        for (std::size_t k = 0; k < n_key; ++k) m.visibility.set(q, k, key_valid[k] != 0);
    return m;
}

inline std::vector<std::uint8_t> all_valid(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// |q + offset - k| for every (query, key) pair.
inline nc::Array distance_matrix(std::size_t n_query, std::size_t n_key, long offset = 0) {
    auto d = nc::Array::matrix(n_query, n_key);
    for (std::size_t q = 0; q < n_query; ++q)
        for (std::size_t k = 0; k < n_key; ++k)
            d.at(q, k) = static_cast<double>(std::labs(static_cast<long>(q) + offset - static_cast<long>(k)));
    return d;
}

// ---------------------------------------------------------------------------
// Time-and-content balanced attention.
//
//   alpha'_{t,i} = alpha_{t,i} * exp(-sin(min(|t-i|, L) / L) / (gamma * max(score_{t,i}, eps)))
//
// where score = q.k / sqrt(d_head). Rows are re-normalised afterwards, which is
// the same as subtracting sin(.)/(gamma * max(score, eps)) from the logits.

inline double tcba_multiplier(double distance, int L, double gamma, double score, double eps = 1e-2) {
    if (L < 1) throw std::invalid_argument("tcba: L must be >= 1");
    if (gamma <= 0.0) throw std::invalid_argument("tcba: gamma must be positive");
    const double dist = std::min(std::abs(distance), static_cast<double>(L));
    return std::exp(-std::sin(dist / static_cast<double>(L)) / (gamma * std::max(score, eps)));
}

// Applies the multiplier to post-softmax weights; optionally re-normalises each
// row over visible entries (rows with no visible mass stay zero).
inline nc::Array tcba_adjust(const nc::Array& alpha, const nc::Array& scores, const nc::Array& distances, int L,
                             double gamma, const nc::Mask& mask, bool renormalize = true, double eps = 1e-2) {
    if (alpha.size() != scores.size() || alpha.size() != distances.size() || mask.rows != alpha.rows() ||
        mask.cols != alpha.cols())
        throw std::invalid_argument("tcba_adjust: shape mismatch");
    nc::Array out = nc::Array::matrix(alpha.rows(), alpha.cols());
    for (std::size_t r = 0; r < alpha.rows(); ++r) {
        if (!renormalize) {
            for (std::size_t c = 0; c < alpha.cols(); ++c)
                if (mask.at(r, c))
                    out.at(r, c) = alpha.at(r, c) * tcba_multiplier(distances.at(r, c), L, gamma, scores.at(r, c), eps);
            continue;
        }
        // log(alpha * multiplier), shifted by the row maximum so that tiny
        // multipliers do not all underflow to zero before the division.
        std::vector<double> logw(alpha.cols(), -INFINITY);
        double mx = -INFINITY;
        for (std::size_t c = 0; c < alpha.cols(); ++c) {
            if (!mask.at(r, c) || alpha.at(r, c) <= 0.0) continue;
            const double dist = std::min(std::abs(distances.at(r, c)), static_cast<double>(L));
            logw[c] = std::log(alpha.at(r, c)) -
                      std::sin(dist / static_cast<double>(L)) / (gamma * std::max(scores.at(r, c), eps));
            mx = std::max(mx, logw[c]);
        }
        if (mx == -INFINITY) continue;
        double z = 0.0;
        for (std::size_t c = 0; c < alpha.cols(); ++c)
            if (logw[c] > -INFINITY) z += out.at(r, c) = std::exp(logw[c] - mx);
        for (std::size_t c = 0; c < alpha.cols(); ++c) out.at(r, c) /= z;
    }
    return out;
}

// q (n x d_head), k (m x d_head) -> q.k^T / sqrt(d_head)
inline nc::Tensor scaled_scores(const nc::Tensor& q, const nc::Tensor& k) {
    if (q.cols() != k.cols()) throw std::invalid_argument("scaled_scores: head widths differ");
    return nc::scale(nc::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
}

// Differentiable TCBA logits: scores - sin(min(dist, L)/L) / (exp(log_gamma) * max(scores, eps)).
inline nc::Tensor tcba_logits(const nc::Tensor& scores, const nc::Tensor& log_gamma, const nc::Array& distances, int L,
                              double eps) {
    if (distances.size() != scores.size()) throw std::invalid_argument("tcba_logits: distance shape mismatch");
    if (log_gamma.size() != 1) throw std::invalid_argument("tcba_logits: gamma must be a scalar");
    if (L < 1) throw std::invalid_argument("tcba: L must be >= 1");
    const double gamma = std::exp(log_gamma.item());
    std::vector<double> penalty(scores.size());
    auto out = nc::Array::matrix(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double dist = std::min(std::abs(distances[i]), static_cast<double>(L));
        penalty[i] = std::sin(dist / static_cast<double>(L));
        out[i] = scores.value()[i] - penalty[i] / (gamma * std::max(scores.value()[i], eps));
    }
    return nc::Tensor::make(std::move(out), "tcba_logits", {scores, log_gamma},
                            [penalty = std::move(penalty), gamma, eps](nc::detail::Node& n) {
                                const auto& sv = n.parents[0]->value;
                                if (auto* g = nc::detail::grad_of(n, 0))
                                    for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                        const double s = sv[i];
                                        const double d = s > eps ? 1.0 + penalty[i] / (gamma * s * s) : 1.0;
                                        g[i] += n.grad[i] * d;
                                    }
                                if (auto* g = nc::detail::grad_of(n, 1)) {
                                    double acc = 0.0;
                                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                                        acc += n.grad[i] * penalty[i] / (gamma * std::max(sv[i], eps));
                                    g[0] += acc;
                                }
                            });
}

// ---------------------------------------------------------------------------
// Encoder block (pre-norm):
//
//   x = q + Dropout(MHA(LN(q), LN(kv)))
//   y = x + Dropout(FFN(LN(x)))
//
// Attention projections carry no bias, so a query row with no visible key
// passes through the attention sublayer unchanged.

struct EncoderConfig {
    int d = 64;
    int heads = 8;
    int ffn_dim = 256;
    double dropout = 0.1;
    AttnKind attn = AttnKind::NONE;
    MaskKind mask = MaskKind::PAD;
    bool self_attention = true;
    int L = 40;
    double tcba_eps = 1e-2;
    int blocks = 1;
};

struct BlockParams {
    nc::Tensor ln1_gain, ln1_bias;
    nc::Tensor lnkv_gain, lnkv_bias;  // cross-attention only
    nc::Tensor wq, wk, wv, wo;
    nc::Tensor log_gamma;  // 1 x heads, TCBA only
    nc::Tensor ln2_gain, ln2_bias;
    nc::Tensor w1, b1, w2, b2;
};

struct EncoderParams {
    std::string name;
    EncoderConfig cfg;
    std::vector<BlockParams> blocks;
};

inline nc::Array linear_init(std::size_t fan_in, std::size_t fan_out, nc::Rng& rng) {
    return normal_array(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

inline EncoderParams make_encoder(const std::string& name, const EncoderConfig& cfg, double gamma_init,
                                  nc::ParamStore& params, nc::Rng& rng) {
    if (cfg.d % cfg.heads != 0) throw std::invalid_argument("encoder: d must be divisible by heads");
    EncoderParams enc{name, cfg, {}};
    const auto d = static_cast<std::size_t>(cfg.d);
    const auto f = static_cast<std::size_t>(cfg.ffn_dim);
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string p = name + "." + std::to_string(b) + ".";
        BlockParams bp;
        bp.ln1_gain = params.add(p + "ln1.gain", nc::Array::matrix(1, d, 1.0));
        bp.ln1_bias = params.add(p + "ln1.bias", nc::Array::matrix(1, d));
        if (!cfg.self_attention) {
            bp.lnkv_gain = params.add(p + "lnkv.gain", nc::Array::matrix(1, d, 1.0));
            bp.lnkv_bias = params.add(p + "lnkv.bias", nc::Array::matrix(1, d));
        }
        bp.wq = params.add(p + "attn.wq", linear_init(d, d, rng));
        bp.wk = params.add(p + "attn.wk", linear_init(d, d, rng));
        bp.wv = params.add(p + "attn.wv", linear_init(d, d, rng));
        bp.wo = params.add(p + "attn.wo", linear_init(d, d, rng));
        if (cfg.attn == AttnKind::TCBA)
            bp.log_gamma = params.add(p + "tcba.log_gamma",
                                      nc::Array::matrix(1, static_cast<std::size_t>(cfg.heads), std::log(gamma_init)));
        bp.ln2_gain = params.add(p + "ln2.gain", nc::Array::matrix(1, d, 1.0));
        bp.ln2_bias = params.add(p + "ln2.bias", nc::Array::matrix(1, d));
        bp.w1 = params.add(p + "ffn.w1", linear_init(d, f, rng));
        bp.b1 = params.add(p + "ffn.b1", nc::Array::matrix(1, f));
        bp.w2 = params.add(p + "ffn.w2", linear_init(f, d, rng));
        bp.b2 = params.add(p + "ffn.b2", nc::Array::matrix(1, d));
        enc.blocks.push_back(std::move(bp));
    }
    return enc;
}

// Dropout source; inactive outside training.
struct ForwardContext {
    bool training = false;
    nc::Rng* rng = nullptr;
    double dropout = 0.0;

    nc::Tensor drop(const nc::Tensor& x) const {
        if (!training || dropout <= 0.0 || !rng) return x;
        return nc::dropout(x, dropout, *rng);
    }
};

struct EncoderOutput {
    nc::Tensor out;
    std::vector<nc::Array> attention;  // per head, last block
    std::vector<bool> fully_masked;    // per query row
};

// Multi-head attention sublayer only (no residual), exposed for tests.
inline nc::Tensor multi_head_attention(const nc::Tensor& q_norm, const nc::Tensor& kv_norm, const BlockParams& bp,
                                       const EncoderConfig& cfg, const AttentionMask& mask,
                                       const nc::Array* distances, EncoderOutput* capture) {
    const auto heads = static_cast<std::size_t>(cfg.heads);
    const auto dh = static_cast<std::size_t>(cfg.d) / heads;
    if (cfg.attn == AttnKind::TCBA && !distances) throw std::invalid_argument("encoder: TCBA needs distances");
    auto Q = nc::matmul(q_norm, bp.wq);
    auto K = nc::matmul(kv_norm, bp.wk);
    auto V = nc::matmul(kv_norm, bp.wv);
    std::vector<nc::Tensor> ctx;
    if (capture) capture->attention.clear();
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = nc::slice_cols(Q, h * dh, dh);
        auto kh = nc::slice_cols(K, h * dh, dh);
        auto vh = nc::slice_cols(V, h * dh, dh);
        auto s = scaled_scores(qh, kh);
        if (cfg.attn == AttnKind::TCBA) s = tcba_logits(s, nc::slice_cols(bp.log_gamma, h, 1), *distances, cfg.L, cfg.tcba_eps);
        std::vector<bool> fm;
        auto p = nc::softmax_rows(s, mask.visibility, &fm);
        if (capture) {
            capture->attention.push_back(p.value());
            capture->fully_masked = fm;
        }
        ctx.push_back(nc::matmul(p, vh));
    }
    return nc::matmul(heads == 1 ? ctx.front() : nc::concat_cols(ctx), bp.wo);
}

inline EncoderOutput encoder_block(const nc::Tensor& q_in, const nc::Tensor& kv_in, const BlockParams& bp,
                                   const EncoderConfig& cfg, const AttentionMask& mask, const nc::Array* distances,
                                   const ForwardContext& ctx) {
    if (q_in.cols() != static_cast<std::size_t>(cfg.d) || kv_in.cols() != static_cast<std::size_t>(cfg.d))
        throw std::invalid_argument("encoder_block: input width differs from d");
    if (mask.visibility.rows != q_in.rows() || mask.visibility.cols != kv_in.rows())
        throw std::invalid_argument("encoder_block: mask shape mismatch");
    EncoderOutput res;
    auto qn = nc::layer_norm(q_in, bp.ln1_gain, bp.ln1_bias);
    auto kvn = cfg.self_attention ? qn : nc::layer_norm(kv_in, bp.lnkv_gain, bp.lnkv_bias);
    auto attn = multi_head_attention(qn, kvn, bp, cfg, mask, distances, &res);
    auto x = nc::add(q_in, ctx.drop(attn));
    auto hidden = nc::gelu(nc::add_row(nc::matmul(nc::layer_norm(x, bp.ln2_gain, bp.ln2_bias), bp.w1), bp.b1));
    auto ffn = nc::add_row(nc::matmul(hidden, bp.w2), bp.b2);
    res.out = nc::add(x, ctx.drop(ffn));
    return res;
}

// Runs all blocks; queries evolve, keys/values stay fixed for cross-attention.
inline EncoderOutput run_encoder(const EncoderParams& enc, const nc::Tensor& q_in, const nc::Tensor& kv_in,
                                 const AttentionMask& mask, const nc::Array* distances, const ForwardContext& ctx) {
    EncoderOutput res;
    nc::Tensor x = q_in;
    for (const auto& bp : enc.blocks) {
        const nc::Tensor& kv = enc.cfg.self_attention ? x : kv_in;
        res = encoder_block(x, kv, bp, enc.cfg, mask, distances, ctx);
        x = res.out;
    }
    return res;
}

}  // namespace alignkt
