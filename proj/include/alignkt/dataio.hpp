#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "alignkt/numcore/checkpoint.hpp"
#include "alignkt/numcore/rng.hpp"

namespace alignkt::data {

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t line_no)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
    std::size_t line;
};

struct Interaction {
    std::string learner_id;
    long long order = 0;
    int exercise = 0;
    int concept_id = 0;
    int response = 0;
};

struct Vocab {
    int num_exercises = 0;
    int num_concepts = 0;
    std::vector<long long> exercise_raw_ids;  // dense id -> raw id
    std::vector<long long> concept_raw_ids;
};

struct LoadResult {
    std::vector<std::vector<Interaction>> learners;
    Vocab vocab;
    std::size_t rows_read = 0;
    std::size_t rejected_rows = 0;  // response outside {0,1}
    std::size_t dropped_learners = 0;
};

inline constexpr const char* kCsvHeader = "learner_id,order,exercise_id,concept_id,response";

namespace detail {

inline std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline long long parse_int(const std::string& s, const char* field, std::size_t line_no) {
    if (s.empty()) throw ParseError(std::string("empty ") + field, line_no);
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw ParseError(std::string("non-integer ") + field + " '" + s + "'", line_no);
    }
    if (used != s.size()) throw ParseError(std::string("non-integer ") + field + " '" + s + "'", line_no);
    return v;
}

// Raw id -> dense id in ascending raw order.
inline std::unordered_map<long long, int> dense_index(std::vector<long long>& raw) {
    std::sort(raw.begin(), raw.end());
    raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
    std::unordered_map<long long, int> idx;
    for (std::size_t i = 0; i < raw.size(); ++i) idx[raw[i]] = static_cast<int>(i);
    return idx;
}

}  // namespace detail

// Parses the interaction CSV. Rows are grouped by learner (first-appearance
// order) and sorted by `order`; exercise and concept ids are re-indexed densely
// in ascending raw-id order over the retained rows.
inline LoadResult parse_interactions(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) break;
    }
    if (detail::trim(line).empty()) throw ParseError("empty input, header required", line_no);
    {
        auto header = detail::split_csv(detail::trim(line));
        if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0] = header[0].substr(3);
        std::string joined;
        for (std::size_t i = 0; i < header.size(); ++i) joined += (i ? "," : "") + header[i];
        if (joined != kCsvHeader)
            throw ParseError("header must be '" + std::string(kCsvHeader) + "', got '" + joined + "'", line_no);
    }

    struct RawRow {
        long long order, exercise, concept_id;
        int response;
    };
    LoadResult res;
    std::vector<std::string> learner_order;
    std::unordered_map<std::string, std::vector<RawRow>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 5) throw ParseError("expected 5 fields, got " + std::to_string(f.size()), line_no);
        if (f[0].empty()) throw ParseError("empty learner_id", line_no);
        RawRow r{};
        r.order = detail::parse_int(f[1], "order", line_no);
        r.exercise = detail::parse_int(f[2], "exercise_id", line_no);
        r.concept_id = detail::parse_int(f[3], "concept_id", line_no);
        const long long resp = detail::parse_int(f[4], "response", line_no);
        if (r.exercise < 0 || r.concept_id < 0) throw ParseError("negative id", line_no);
        ++res.rows_read;
        if (resp != 0 && resp != 1) {
            ++res.rejected_rows;
            continue;
        }
        r.response = static_cast<int>(resp);
        auto [it, inserted] = rows.try_emplace(f[0]);
        if (inserted) learner_order.push_back(f[0]);
        it->second.push_back(r);
    }

    std::vector<long long> ex_raw, c_raw;
    std::vector<std::string> kept;
    for (const auto& id : learner_order) {
        auto& rs = rows[id];
        if (rs.size() < 2) {
            ++res.dropped_learners;
            continue;
        }
        std::stable_sort(rs.begin(), rs.end(), [](const RawRow& a, const RawRow& b) { return a.order < b.order; });
        for (const auto& r : rs) {
            ex_raw.push_back(r.exercise);
            c_raw.push_back(r.concept_id);
        }
        kept.push_back(id);
    }
    const auto ex_idx = detail::dense_index(ex_raw);
    const auto c_idx = detail::dense_index(c_raw);
    res.vocab.num_exercises = static_cast<int>(ex_raw.size());
    res.vocab.num_concepts = static_cast<int>(c_raw.size());
    res.vocab.exercise_raw_ids = std::move(ex_raw);
    res.vocab.concept_raw_ids = std::move(c_raw);
    for (const auto& id : kept) {
        std::vector<Interaction> seq;
        for (const auto& r : rows[id])
            seq.push_back({id, r.order, ex_idx.at(r.exercise), c_idx.at(r.concept_id), r.response});
        res.learners.push_back(std::move(seq));
    }
    return res;
}

inline LoadResult load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return parse_interactions(in);
}

// One fixed-length window of a learner's record. Padding is a suffix.
struct InteractionSequence {
    std::string learner_id;
    int window = 0;
    std::vector<int> exercises;
    std::vector<int> concepts;
    std::vector<int> responses;
    std::vector<std::uint8_t> valid;

    std::size_t max_len() const { return valid.size(); }
    std::size_t length() const {
        return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
    }
    bool operator==(const InteractionSequence&) const = default;
};

// Consecutive non-overlapping windows; the last one is right-padded, and any
// window shorter than 2 is dropped.
inline std::vector<InteractionSequence> window_sequences(const std::vector<Interaction>& learner, std::size_t max_len) {
    if (max_len < 2) throw std::invalid_argument("window_sequences: max_len must be >= 2");
    std::vector<InteractionSequence> out;
    for (std::size_t start = 0; start < learner.size(); start += max_len) {
        const std::size_t n = std::min(max_len, learner.size() - start);
        if (n < 2) break;
        InteractionSequence s;
        s.learner_id = learner[start].learner_id;
        s.window = static_cast<int>(out.size());
        s.exercises.assign(max_len, 0);
        s.concepts.assign(max_len, 0);
        s.responses.assign(max_len, 0);
        s.valid.assign(max_len, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& it = learner[start + i];
            s.exercises[i] = it.exercise;
            s.concepts[i] = it.concept_id;
            s.responses[i] = it.response;
            s.valid[i] = 1;
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Stacked sequences plus derived state ids s = c + N_c * r. Concept id N_c
// and state id 2 * N_c are the reserved [MASK] ids.
struct Batch {
    int num_concepts = 0;
    std::vector<InteractionSequence> seqs;
    std::vector<std::vector<int>> states;

    int mask_concept() const { return num_concepts; }
    int mask_state() const { return 2 * num_concepts; }
    std::size_t size() const { return seqs.size(); }
    bool operator==(const Batch&) const = default;
};

inline int state_id(int concept_id, int response, int num_concepts) { return concept_id + num_concepts * response; }

inline Batch make_batch(std::vector<InteractionSequence> seqs, int num_concepts) {
    Batch b;
    b.num_concepts = num_concepts;
    for (const auto& s : seqs) {
        std::vector<int> st(s.max_len(), 0);
        for (std::size_t i = 0; i < s.max_len(); ++i) {
            if (!s.valid[i]) continue;
            if (s.concepts[i] < 0 || s.concepts[i] >= num_concepts)
                throw std::out_of_range("make_batch: concept id " + std::to_string(s.concepts[i]) + " >= N_c");
            st[i] = state_id(s.concepts[i], s.responses[i], num_concepts);
        }
        b.states.push_back(std::move(st));
    }
    b.seqs = std::move(seqs);
    return b;
}

// Deterministic shuffle into batches; the trailing partial batch is kept.
inline std::vector<Batch> make_batches(const std::vector<InteractionSequence>& sequences, std::size_t batch_size,
                                       int num_concepts, std::uint64_t shuffle_seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    if (sequences.empty()) throw std::invalid_argument("make_batches: empty dataset");
    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    nc::Rng rng(shuffle_seed);
    rng.shuffle(order);
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::vector<InteractionSequence> chunk;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
            chunk.push_back(sequences[order[i]]);
        out.push_back(make_batch(std::move(chunk), num_concepts));
    }
    return out;
}

// Positive view: floor(rho_swap * len) adjacent valid pairs swapped (distinct
// left positions), then floor(rho_mask * len) distinct valid positions have
// their concept/state ids replaced by [MASK]. Responses and padding untouched.
inline Batch augment_positive(const Batch& batch, double rho_mask, double rho_swap, std::uint64_t seed) {
    if (rho_mask < 0.0 || rho_mask > 0.5 || rho_swap < 0.0 || rho_swap > 0.5)
        throw std::invalid_argument("augment_positive: rates must lie in [0, 0.5]");
    Batch out = batch;
    nc::Rng rng(seed);
    for (std::size_t b = 0; b < out.size(); ++b) {
        auto& s = out.seqs[b];
        auto& st = out.states[b];
        const std::size_t len = s.length();
        const auto n_swap = static_cast<std::size_t>(std::floor(rho_swap * static_cast<double>(len)));
        const auto n_mask = static_cast<std::size_t>(std::floor(rho_mask * static_cast<double>(len)));
        if (n_swap > 0 && len >= 2) {
            std::vector<std::size_t> left(len - 1);
            for (std::size_t i = 0; i < left.size(); ++i) left[i] = i;
            rng.shuffle(left);
            for (std::size_t k = 0; k < std::min(n_swap, left.size()); ++k) {
                const std::size_t i = left[k];
                std::swap(s.exercises[i], s.exercises[i + 1]);
                std::swap(s.concepts[i], s.concepts[i + 1]);
                std::swap(s.responses[i], s.responses[i + 1]);
                std::swap(st[i], st[i + 1]);
            }
        }
        if (n_mask > 0) {
            std::vector<std::size_t> pos(len);
            for (std::size_t i = 0; i < len; ++i) pos[i] = i;
            rng.shuffle(pos);
            for (std::size_t k = 0; k < n_mask; ++k) {
                s.concepts[pos[k]] = out.mask_concept();
                st[pos[k]] = out.mask_state();
            }
        }
    }
    return out;
}

// Negative view: every valid response flipped, state ids recomputed.
inline Batch augment_negative(const Batch& batch) {
    Batch out = batch;
    for (std::size_t b = 0; b < out.size(); ++b) {
        auto& s = out.seqs[b];
        for (std::size_t i = 0; i < s.max_len(); ++i) {
            if (!s.valid[i]) continue;
            s.responses[i] = 1 - s.responses[i];
            if (s.concepts[i] < out.num_concepts)
                out.states[b][i] = state_id(s.concepts[i], s.responses[i], out.num_concepts);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessed cache.
//
//   magic      8 bytes "AKTCACH1"
//   u32        N_e, N_c, max_len
//   u32        count, then count x i64 raw exercise ids (dense order)
//   u32        count, then count x i64 raw concept ids
//   u32        number of windows
//   per window u32 learner id length, bytes, u32 window index, u32 valid length,
//              then valid length x (i32 exercise, i32 concept, u8 response)
//
// All integers little-endian. A JSON manifest with the vocabulary summary is
// written next to the cache as <cache>.json.

struct Dataset {
    Vocab vocab;
    std::size_t max_len = 200;
    std::vector<InteractionSequence> windows;

    std::vector<std::string> learner_ids() const {
        std::vector<std::string> ids;
        for (const auto& w : windows)
            if (ids.empty() || ids.back() != w.learner_id) ids.push_back(w.learner_id);
        return ids;
    }
};

inline Dataset build_dataset(const LoadResult& loaded, std::size_t max_len) {
    Dataset ds;
    ds.vocab = loaded.vocab;
    ds.max_len = max_len;
    for (const auto& learner : loaded.learners)
        for (auto& w : window_sequences(learner, max_len)) ds.windows.push_back(std::move(w));
    return ds;
}

inline constexpr char kCacheMagic[8] = {'A', 'K', 'T', 'C', 'A', 'C', 'H', '1'};

inline std::string encode_cache(const Dataset& ds) {
    using nc::detail::put_le;
    std::string out(kCacheMagic, sizeof(kCacheMagic));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.vocab.num_exercises));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.vocab.num_concepts));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.max_len));
    for (const auto* ids : {&ds.vocab.exercise_raw_ids, &ds.vocab.concept_raw_ids}) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ids->size()));
        for (long long v : *ids) put_le<std::int64_t>(out, v);
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.windows.size()));
    for (const auto& w : ds.windows) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.learner_id.size()));
        out += w.learner_id;
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.window));
        const auto n = w.length();
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n));
        for (std::size_t i = 0; i < n; ++i) {
            put_le<std::int32_t>(out, w.exercises[i]);
            put_le<std::int32_t>(out, w.concepts[i]);
            put_le<std::uint8_t>(out, static_cast<std::uint8_t>(w.responses[i]));
        }
    }
    return out;
}

inline Dataset decode_cache(std::string bytes) {
    nc::detail::Reader rd(std::move(bytes));
    if (rd.bytes(sizeof(kCacheMagic)) != std::string(kCacheMagic, sizeof(kCacheMagic)))
        throw std::runtime_error("cache: bad magic");
    Dataset ds;
    ds.vocab.num_exercises = static_cast<int>(rd.get<std::uint32_t>());
    ds.vocab.num_concepts = static_cast<int>(rd.get<std::uint32_t>());
    ds.max_len = rd.get<std::uint32_t>();
    for (auto* ids : {&ds.vocab.exercise_raw_ids, &ds.vocab.concept_raw_ids}) {
        ids->resize(rd.get<std::uint32_t>());
        for (auto& v : *ids) v = rd.get<std::int64_t>();
    }
    const auto n_windows = rd.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n_windows; ++k) {
        InteractionSequence w;
        w.learner_id = rd.bytes(rd.get<std::uint32_t>());
        w.window = static_cast<int>(rd.get<std::uint32_t>());
        const auto n = rd.get<std::uint32_t>();
        if (n > ds.max_len) throw std::runtime_error("cache: window longer than max_len");
        w.exercises.assign(ds.max_len, 0);
        w.concepts.assign(ds.max_len, 0);
        w.responses.assign(ds.max_len, 0);
        w.valid.assign(ds.max_len, 0);
        for (std::uint32_t i = 0; i < n; ++i) {
            w.exercises[i] = rd.get<std::int32_t>();
            w.concepts[i] = rd.get<std::int32_t>();
            w.responses[i] = rd.get<std::uint8_t>();
            w.valid[i] = 1;
            if (w.exercises[i] < 0 || w.exercises[i] >= ds.vocab.num_exercises || w.concepts[i] < 0 ||
                w.concepts[i] >= ds.vocab.num_concepts || w.responses[i] > 1)
                throw std::runtime_error("cache: id out of range in window " + std::to_string(k));
        }
        ds.windows.push_back(std::move(w));
    }
    if (!rd.done()) throw std::runtime_error("cache: trailing bytes");
    return ds;
}

inline void save_cache(const std::string& path, const Dataset& ds) { nc::detail::write_file(path, encode_cache(ds)); }
inline Dataset load_cache(const std::string& path) { return decode_cache(nc::detail::read_file(path)); }

// Learner-level split of window indices: train / validation / test.
struct Split {
    std::vector<InteractionSequence> train, valid, test;
};

inline Split split_by_learner(const Dataset& ds, std::uint64_t seed, double train_frac = 0.72, double valid_frac = 0.08) {
    auto ids = ds.learner_ids();
    nc::Rng rng(seed);
    rng.shuffle(ids);
    const auto n = ids.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_frac * static_cast<double>(n)));
    std::map<std::string, int> part;
    for (std::size_t i = 0; i < n; ++i) part[ids[i]] = i < n_train ? 0 : (i < n_train + n_valid ? 1 : 2);
    Split s;
    for (const auto& w : ds.windows) {
        const int p = part.at(w.learner_id);
        (p == 0 ? s.train : p == 1 ? s.valid : s.test).push_back(w);
    }
    return s;
}

}  // namespace alignkt::data
