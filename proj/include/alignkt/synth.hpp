#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/dataio.hpp"
#include "alignkt/numcore/rng.hpp"

// Rule-based interaction generator for tests and demos.
//
//   seen-before      correct iff the concept appeared earlier for this learner
//   mastered-after-k correct iff the concept appeared at least k times before
//   always-correct   every response is 1
//
// Exercise ids are concept * exercises_per_concept + variant.

namespace alignkt::synth {

enum class Rule { SeenBefore, MasteredAfterK, AlwaysCorrect };

inline Rule parse_rule(const std::string& s) {
    if (s == "seen-before") return Rule::SeenBefore;
    if (s == "mastered-after-k") return Rule::MasteredAfterK;
    if (s == "always-correct") return Rule::AlwaysCorrect;
    throw std::invalid_argument("unknown rule '" + s + "' (expected seen-before|mastered-after-k|always-correct)");
}

inline std::string rule_name(Rule r) {
    switch (r) {
        case Rule::SeenBefore: return "seen-before";
        case Rule::MasteredAfterK: return "mastered-after-k";
        case Rule::AlwaysCorrect: return "always-correct";
    }
    return "?";
}

struct SynthConfig {
    int learners = 50;
    std::uint64_t seed = 1;
    Rule rule = Rule::SeenBefore;
    int k = 2;
    int concepts = 12;
    int exercises_per_concept = 4;
    int min_len = 20;
    int max_len = 200;
};

inline int rule_response(Rule rule, int prior_exposures, int k) {
    switch (rule) {
        case Rule::SeenBefore: return prior_exposures > 0 ? 1 : 0;
        case Rule::MasteredAfterK: return prior_exposures >= k ? 1 : 0;
        case Rule::AlwaysCorrect: return 1;
    }
    return 0;
}

inline std::vector<std::vector<data::Interaction>> generate(const SynthConfig& cfg) {
    if (cfg.learners < 1) throw std::invalid_argument("synth: learners must be >= 1");
    if (cfg.concepts < 1 || cfg.exercises_per_concept < 1) throw std::invalid_argument("synth: empty vocabulary");
    if (cfg.min_len < 2 || cfg.max_len < cfg.min_len) throw std::invalid_argument("synth: need 2 <= min_len <= max_len");
    nc::Rng rng(cfg.seed);
    std::vector<std::vector<data::Interaction>> out;
    for (int l = 0; l < cfg.learners; ++l) {
        char id[32];
        std::snprintf(id, sizeof id, "L%04d", l);
        const int len = cfg.min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1)));
        std::vector<int> exposures(static_cast<std::size_t>(cfg.concepts), 0);
        std::vector<data::Interaction> seq;
        for (int t = 0; t < len; ++t) {
            const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.concepts)));
            const int e = c * cfg.exercises_per_concept +
                          static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.exercises_per_concept)));
            const int r = rule_response(cfg.rule, exposures[static_cast<std::size_t>(c)], cfg.k);
            ++exposures[static_cast<std::size_t>(c)];
            seq.push_back({id, t, e, c, r});
        }
        out.push_back(std::move(seq));
    }
    return out;
}

inline void write_csv(std::ostream& os, const std::vector<std::vector<data::Interaction>>& learners) {
    os << data::kCsvHeader << '\n';
    for (const auto& seq : learners)
        for (const auto& it : seq)
            os << it.learner_id << ',' << it.order << ',' << it.exercise << ',' << it.concept_id << ',' << it.response
               << '\n';
}

}  // namespace alignkt::synth
