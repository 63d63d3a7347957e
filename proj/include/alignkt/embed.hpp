#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/config.hpp"
#include "alignkt/numcore/ops.hpp"
#include "alignkt/numcore/params.hpp"

// Concept/state embeddings and the modified Rasch-model blend:
//
//   out_t = (1 - a) * table[id_t] + a * mu_{e_t} * (var[id_t] + f_diff(mu_{e_t}))
//
// with f_diff(mu) = mu * w + b. The tables carry one extra trailing row for
// the reserved [MASK] id.

namespace alignkt {

struct EmbeddingTables {
    int num_concepts = 0;
    int num_exercises = 0;
    nc::Tensor concept_table;   // (N_c + 1) x d
    nc::Tensor state_table;     // (2 N_c + 1) x d
    // M-RME terms; undefined when the blend is disabled.
    nc::Tensor variation_concept;  // (N_c + 1) x d
    nc::Tensor variation_state;    // (2 N_c + 1) x d
    nc::Tensor difficulty;         // N_e x 1, mu_e
    nc::Tensor fdiff_weight;       // 1 x d
    nc::Tensor fdiff_bias;         // 1 x d

    bool has_mrme() const { return difficulty.defined(); }
};

inline nc::Array normal_array(std::size_t rows, std::size_t cols, double stddev, nc::Rng& rng) {
    auto a = nc::Array::matrix(rows, cols);
    for (auto& v : a.data()) v = rng.normal(0.0, stddev);
    return a;
}

inline EmbeddingTables make_embedding_tables(const ModelConfig& cfg, nc::ParamStore& params, nc::Rng& rng) {
    EmbeddingTables t;
    t.num_concepts = cfg.num_concepts;
    t.num_exercises = cfg.num_exercises;
    const auto d = static_cast<std::size_t>(cfg.d);
    const auto nc_rows = static_cast<std::size_t>(cfg.num_concepts) + 1;
    const auto ns_rows = 2 * static_cast<std::size_t>(cfg.num_concepts) + 1;
    t.concept_table = params.add("emb.concept", normal_array(nc_rows, d, cfg.init_std, rng));
    t.state_table = params.add("emb.state", normal_array(ns_rows, d, cfg.init_std, rng));
    if (cfg.use_mrme) {
        t.variation_concept = params.add("mrme.var_concept", normal_array(nc_rows, d, cfg.init_std, rng));
        t.variation_state = params.add("mrme.var_state", normal_array(ns_rows, d, cfg.init_std, rng));
        t.difficulty = params.add("mrme.difficulty", nc::Array::matrix(static_cast<std::size_t>(cfg.num_exercises), 1));
        t.fdiff_weight = params.add("mrme.fdiff.weight", normal_array(1, d, cfg.init_std, rng));
        t.fdiff_bias = params.add("mrme.fdiff.bias", nc::Array::matrix(1, d));
    }
    return t;
}

namespace detail {

inline nc::Tensor mrme_blend(const nc::Tensor& table, const nc::Tensor& variation, const EmbeddingTables& t,
                             std::span<const int> ids, std::span<const int> exercises, double a) {
    if (ids.size() != exercises.size()) throw std::invalid_argument("embed: id and exercise arrays differ in length");
    if (a < 0.0 || a > 1.0) throw std::invalid_argument("embed: mix weight must lie in [0, 1]");
    auto base = nc::gather_rows(table, ids);
    if (!t.has_mrme()) return base;
    auto mu = nc::gather_rows(t.difficulty, exercises);
    auto fdiff = nc::add_row(nc::matmul(mu, t.fdiff_weight), t.fdiff_bias);
    auto supplement = nc::mul_rows(nc::add(nc::gather_rows(variation, ids), fdiff), mu);
    return nc::add(nc::scale(base, 1.0 - a), nc::scale(supplement, a));
}

}  // namespace detail

inline nc::Tensor embed_concepts(std::span<const int> concepts, std::span<const int> exercises,
                                 const EmbeddingTables& t, double a1) {
    return detail::mrme_blend(t.concept_table, t.variation_concept, t, concepts, exercises, a1);
}

inline nc::Tensor embed_states(std::span<const int> states, std::span<const int> exercises, const EmbeddingTables& t,
                               double a2) {
    return detail::mrme_blend(t.state_table, t.variation_state, t, states, exercises, a2);
}

// State ids of the all-mastered ideal state: N_c, ..., 2 N_c - 1.
inline std::vector<int> ideal_state_ids(int num_concepts) {
    if (num_concepts < 1) throw std::invalid_argument("ideal_state_ids: N_c must be >= 1");
    std::vector<int> ids(static_cast<std::size_t>(num_concepts));
    for (int c = 0; c < num_concepts; ++c) ids[static_cast<std::size_t>(c)] = c + num_concepts;
    return ids;
}

}  // namespace alignkt
