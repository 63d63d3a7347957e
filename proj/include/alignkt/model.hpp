#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/attention.hpp"
#include "alignkt/config.hpp"
#include "alignkt/dataio.hpp"
#include "alignkt/embed.hpp"
#include "alignkt/numcore/ops.hpp"
#include "alignkt/numcore/params.hpp"

namespace alignkt {

// One learner window cropped to its valid steps.
struct SequenceInput {
    std::vector<int> exercises;
    std::vector<int> concepts;
    std::vector<int> states;
    std::vector<int> responses;

    std::size_t length() const { return exercises.size(); }
};

inline SequenceInput sequence_input(const data::Batch& batch, std::size_t i) {
    const auto& s = batch.seqs.at(i);
    SequenceInput in;
    for (std::size_t t = 0; t < s.max_len(); ++t) {
        if (!s.valid[t]) break;
        in.exercises.push_back(s.exercises[t]);
        in.concepts.push_back(s.concepts[t]);
        in.states.push_back(batch.states[i][t]);
        in.responses.push_back(s.responses[t]);
    }
    return in;
}

struct FrontendOutput {
    nc::Tensor concept_encoded;   // concept encoder over c_{2:t}
    nc::Tensor preliminary_state; // state encoder over s_{1:t-1}
    nc::Tensor queried_concepts;  // state retriever, query c_{2:t}, key/value s_{1:t-1}
    std::size_t steps = 0;        // t - 1
};

struct BackendOutput {
    nc::Tensor ideal_memory;   // N_c x d
    nc::Tensor aligned_state;  // (t-1) x d
    nc::Array psr_attention;   // (t-1) x N_c, head-averaged
};

struct SequenceOutput {
    FrontendOutput frontend;
    BackendOutput backend;
    nc::Tensor predictions;  // (t-1) x 1, for steps 2..t
};

enum class StateMode { Attention, Readout };

inline StateMode parse_state_mode(const std::string& s) {
    if (s == "attention") return StateMode::Attention;
    if (s == "readout") return StateMode::Readout;
    throw std::invalid_argument("unknown knowledge-state mode '" + s + "' (expected attention|readout)");
}

struct KnowledgeStateMatrix {
    nc::Array values;  // (t-1) x N_c
    StateMode mode = StateMode::Readout;
};

// Which optional paths exist in a built model.
struct Architecture {
    bool tcba = false;
    bool mrme = false;
};

class AlignKT {
public:
    AlignKT(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
        cfg_.validate();
        nc::Rng rng(seed);
        tables_ = make_embedding_tables(cfg_, params_, rng);

        EncoderConfig front;
        front.d = cfg_.d;
        front.heads = cfg_.heads;
        front.ffn_dim = cfg_.ffn_mult * cfg_.d;
        front.dropout = cfg_.dropout;
        front.attn = cfg_.use_tcba ? AttnKind::TCBA : AttnKind::NONE;
        front.mask = MaskKind::CAU;
        front.L = cfg_.L;
        front.tcba_eps = cfg_.tcba_eps;
        front.blocks = cfg_.blocks;

        EncoderConfig back = front;
        back.attn = AttnKind::NONE;
        back.mask = MaskKind::PAD;

        auto cross = [](EncoderConfig c) {
            c.self_attention = false;
            return c;
        };
        concept_encoder_ = make_encoder("concept_encoder", front, cfg_.gamma_init, params_, rng);
        state_encoder_ = make_encoder("state_encoder", front, cfg_.gamma_init, params_, rng);
        state_retriever_ = make_encoder("state_retriever", cross(front), cfg_.gamma_init, params_, rng);
        ideal_encoder_ = make_encoder("ideal_state_encoder", back, cfg_.gamma_init, params_, rng);
        personal_retriever_ = make_encoder("personal_state_retriever", cross(back), cfg_.gamma_init, params_, rng);

        const auto d = static_cast<std::size_t>(cfg_.d);
        head_w1_ = params_.add("head.w1", linear_init(2 * d, d, rng));
        head_b1_ = params_.add("head.b1", nc::Array::matrix(1, d));
        head_w2_ = params_.add("head.w2", linear_init(d, 1, rng));
        head_b2_ = params_.add("head.b2", nc::Array::matrix(1, 1));
    }

    const ModelConfig& config() const { return cfg_; }
    nc::ParamStore& params() { return params_; }
    const nc::ParamStore& params() const { return params_; }
    const EmbeddingTables& tables() const { return tables_; }
    Architecture architecture() const { return {cfg_.use_tcba, tables_.has_mrme()}; }
    const EncoderParams& encoder(const std::string& name) const {
        for (const auto* e : {&concept_encoder_, &state_encoder_, &state_retriever_, &ideal_encoder_,
                              &personal_retriever_})
            if (e->name == name) return *e;
        throw std::out_of_range("no encoder '" + name + "'");
    }

    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

    ForwardContext context(bool training) {
        return ForwardContext{training, &dropout_rng_, cfg_.dropout};
    }

    // Concept encoder over c_{2:t} and state encoder over s_{1:t-1}.
    std::pair<nc::Tensor, nc::Tensor> encode_views(const SequenceInput& in, const ForwardContext& ctx) const {
        const std::size_t T = in.length();
        if (T < 2) throw std::invalid_argument("frontend: a sequence needs at least 2 steps");
        const std::span<const int> ex(in.exercises);
        const std::span<const int> cs(in.concepts);
        const std::span<const int> ss(in.states);
        auto c = embed_concepts(cs.subspan(1), ex.subspan(1), tables_, cfg_.a1);
        auto s = embed_states(ss.first(T - 1), ex.first(T - 1), tables_, cfg_.a2);
        const std::size_t n = T - 1;
        const auto valid = all_valid(n);
        const auto mask = causal_mask(n, n, valid);
        const auto dist = distance_matrix(n, n);
        auto ce = run_encoder(concept_encoder_, c, c, mask, &dist, ctx).out;
        auto se = run_encoder(state_encoder_, s, s, mask, &dist, ctx).out;
        return {ce, se};
    }

    FrontendOutput frontend_forward(const SequenceInput& in, const ForwardContext& ctx) const {
        auto [ce, se] = encode_views(in, ctx);
        const std::size_t n = in.length() - 1;
        // Target step t (row j) reads states at steps <= t-1 (rows <= j); the
        // temporal distance between target t and state i is t - i.
        const auto valid = all_valid(n);
        const auto mask = causal_mask(n, n, valid);
        const auto dist = distance_matrix(n, n, 1);
        auto chat = run_encoder(state_retriever_, ce, se, mask, &dist, ctx).out;
        return {ce, se, chat, n};
    }

    nc::Tensor ideal_memory(const ForwardContext& ctx) const {
        const auto ids = ideal_state_ids(cfg_.num_concepts);
        auto ideal = nc::gather_rows(tables_.state_table, ids);
        const auto n = ids.size();
        const auto valid = all_valid(n);
        return run_encoder(ideal_encoder_, ideal, ideal, padding_mask(n, n, valid), nullptr, ctx).out;
    }

    BackendOutput backend_forward(const FrontendOutput& front, const ForwardContext& ctx,
                                  const nc::Tensor* memory = nullptr) const {
        BackendOutput out;
        out.ideal_memory = memory ? *memory : ideal_memory(ctx);
        const auto nk = out.ideal_memory.rows();
        const auto valid = all_valid(nk);
        auto res = run_encoder(personal_retriever_, front.preliminary_state, out.ideal_memory,
                               padding_mask(front.steps, nk, valid), nullptr, ctx);
        out.aligned_state = res.out;
        out.psr_attention = average_heads(res.attention);
        return out;
    }

    // sigma(MLP([aligned ; queried])) per step.
    nc::Tensor predict(const FrontendOutput& front, const BackendOutput& back, const ForwardContext& ctx) const {
        return head(nc::concat_cols({back.aligned_state, front.queried_concepts}), ctx);
    }

    SequenceOutput forward(const SequenceInput& in, const ForwardContext& ctx, const nc::Tensor* memory = nullptr) const {
        SequenceOutput out;
        out.frontend = frontend_forward(in, ctx);
        out.backend = backend_forward(out.frontend, ctx, memory);
        out.predictions = predict(out.frontend, out.backend, ctx);
        return out;
    }

    // Attention mode: the personal-state retriever's weights over ideal
    // concepts. Readout mode: the prediction head probed with every concept,
    // each concept row queried against the learner's state history by the
    // state retriever at that step.
    KnowledgeStateMatrix knowledge_state_matrix(const SequenceInput& in, StateMode mode) {
        nc::NoGradGuard no_grad;
        const auto ctx = context(false);
        const auto out = forward(in, ctx);
        KnowledgeStateMatrix ks;
        ks.mode = mode;
        if (mode == StateMode::Attention) {
            ks.values = out.backend.psr_attention;
            return ks;
        }
        const auto n = out.frontend.steps;
        const auto n_c = static_cast<std::size_t>(cfg_.num_concepts);
        ks.values = nc::Array::matrix(n, n_c);
        std::vector<int> concept_ids(n_c);
        for (std::size_t j = 0; j < n_c; ++j) concept_ids[j] = static_cast<int>(j);
        auto probes = nc::gather_rows(tables_.concept_table, concept_ids);
        for (std::size_t i = 0; i < n; ++i) {
            auto history = nc::slice_rows(out.frontend.preliminary_state, 0, i + 1);
            const auto valid = all_valid(i + 1);
            const auto mask = padding_mask(n_c, i + 1, valid);
            nc::Array dist = nc::Array::matrix(n_c, i + 1);
            for (std::size_t j = 0; j < n_c; ++j)
                for (std::size_t k = 0; k <= i; ++k) dist.at(j, k) = static_cast<double>(i + 1 - k);
            auto retrieved = run_encoder(state_retriever_, probes, history, AttentionMask{MaskKind::CAU, mask.visibility},
                                         &dist, ctx)
                                 .out;
            std::vector<int> same_row(n_c, static_cast<int>(i));
            auto aligned = nc::gather_rows(out.backend.aligned_state, same_row);
            auto p = head(nc::concat_cols({aligned, retrieved}), ctx);
            for (std::size_t j = 0; j < n_c; ++j) ks.values.at(i, j) = p.value()[j];
        }
        return ks;
    }

private:
    static nc::Array average_heads(const std::vector<nc::Array>& per_head) {
        if (per_head.empty()) return {};
        nc::Array avg = nc::Array::matrix(per_head.front().rows(), per_head.front().cols());
        for (const auto& h : per_head)
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += h[i];
        for (auto& v : avg.data()) v /= static_cast<double>(per_head.size());
        return avg;
    }

    nc::Tensor head(const nc::Tensor& features, const ForwardContext& ctx) const {
        auto h = nc::gelu(nc::add_row(nc::matmul(ctx.drop(features), head_w1_), head_b1_));
        return nc::sigmoid(nc::add_row(nc::matmul(h, head_w2_), head_b2_));
    }

    ModelConfig cfg_;
    nc::ParamStore params_;
    nc::Rng dropout_rng_;
    EmbeddingTables tables_;
    EncoderParams concept_encoder_, state_encoder_, state_retriever_, ideal_encoder_, personal_retriever_;
    nc::Tensor head_w1_, head_b1_, head_w2_, head_b2_;
};

}  // namespace alignkt
