#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "alignkt/dataio.hpp"
#include "alignkt/synth.hpp"

using namespace alignkt;
using namespace alignkt::data;

namespace {

std::vector<Interaction> learner_of(std::size_t n, int num_concepts = 5) {
    std::vector<Interaction> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({"u", static_cast<long long>(i), static_cast<int>(i % 7), static_cast<int>(i % num_concepts),
                       static_cast<int>(i % 2)});
    return out;
}

LoadResult parse(const std::string& text) {
    std::istringstream in(text);
    return parse_interactions(in);
}

Batch sample_batch(std::size_t len, int num_concepts = 5) {
    auto w = window_sequences(learner_of(len, num_concepts), 200);
    return make_batch(w, num_concepts);
}

}  // namespace

TEST(Windows, LongSequenceSplitsIntoConsecutiveWindows) {
    const auto w = window_sequences(learner_of(450), 200);
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w[0].length(), 200u);
    EXPECT_EQ(w[1].length(), 200u);
    EXPECT_EQ(w[2].length(), 50u);
    EXPECT_EQ(w[2].max_len(), 200u);
    EXPECT_EQ(w[1].exercises[0], 200 % 7);
    for (std::size_t i = 50; i < 200; ++i) EXPECT_EQ(w[2].valid[i], 0);
}

TEST(Windows, TrailingSingletonIsDropped) {
    const auto w = window_sequences(learner_of(201), 200);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].length(), 200u);
}

TEST(Windows, ExactMultipleAndShort) {
    EXPECT_EQ(window_sequences(learner_of(400), 200).size(), 2u);
    const auto w = window_sequences(learner_of(2), 200);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].length(), 2u);
}

TEST(Parse, SortsByOrderAndBuildsDenseIds) {
    const auto r = parse(
        "learner_id,order,exercise_id,concept_id,response\n"
        "b,2,900,30,1\n"
        "a,5,100,20,0\n"
        "a,1,500,10,1\n"
        "b,1,100,20,0\n");
    ASSERT_EQ(r.learners.size(), 2u);
    EXPECT_EQ(r.vocab.num_exercises, 3);
    EXPECT_EQ(r.vocab.num_concepts, 3);
    EXPECT_EQ(r.vocab.concept_raw_ids, (std::vector<long long>{10, 20, 30}));
    // learners keep first-appearance order
    EXPECT_EQ(r.learners[0][0].learner_id, "b");
    const auto& a = r.learners[1];
    EXPECT_EQ(a[0].learner_id, "a");
    EXPECT_EQ(a[0].order, 1);
    EXPECT_EQ(a[0].exercise, 1);  // raw 500
    EXPECT_EQ(a[0].concept_id, 0);
    EXPECT_EQ(a[1].exercise, 0);  // raw 100
}

TEST(Parse, RejectsAndDrops) {
    const auto r = parse(
        "learner_id,order,exercise_id,concept_id,response\n"
        "a,1,1,1,1\n"
        "a,2,1,1,2\n"
        "a,3,2,1,0\n"
        "solo,1,3,3,1\n");
    EXPECT_EQ(r.rows_read, 4u);
    EXPECT_EQ(r.rejected_rows, 1u);
    EXPECT_EQ(r.dropped_learners, 1u);
    ASSERT_EQ(r.learners.size(), 1u);
    // ids from the dropped learner do not enter the vocabulary
    EXPECT_EQ(r.vocab.num_concepts, 1);
    EXPECT_EQ(r.vocab.num_exercises, 2);
}

TEST(Parse, MalformedInputReportsLine) {
    EXPECT_THROW(parse("wrong,header\n"), ParseError);
    try {
        parse("learner_id,order,exercise_id,concept_id,response\na,1,1,1,1\na,x,1,1,1\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line, 3u);
    }
    EXPECT_THROW(parse("learner_id,order,exercise_id,concept_id,response\na,1,1,1\n"), ParseError);
}

TEST(Parse, AcceptsBomAndCrlf) {
    const auto r = parse("\xEF\xBB\xBFlearner_id,order,exercise_id,concept_id,response\r\na,1,1,1,1\r\na,2,1,1,0\r\n");
    ASSERT_EQ(r.learners.size(), 1u);
    EXPECT_EQ(r.learners[0][1].response, 0);
}

TEST(States, IdFormula) {
    EXPECT_EQ(state_id(52, 1, 123), 175);
    EXPECT_EQ(state_id(52, 0, 123), 52);
    const auto b = sample_batch(10);
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_EQ(b.states[0][i], b.seqs[0].concepts[i] + 5 * b.seqs[0].responses[i]);
    EXPECT_EQ(b.mask_concept(), 5);
    EXPECT_EQ(b.mask_state(), 10);
}

TEST(Batches, SizesAndDeterminism) {
    std::vector<InteractionSequence> seqs;
    for (int i = 0; i < 10; ++i) {
        auto w = window_sequences(learner_of(5 + static_cast<std::size_t>(i)), 20);
        w[0].learner_id = "u" + std::to_string(i);
        seqs.push_back(w[0]);
    }
    const auto a = make_batches(seqs, 4, 5, 17);
    ASSERT_EQ(a.size(), 3u);
    EXPECT_EQ(a[0].size(), 4u);
    EXPECT_EQ(a[1].size(), 4u);
    EXPECT_EQ(a[2].size(), 2u);
    EXPECT_EQ(a, make_batches(seqs, 4, 5, 17));
    std::set<std::string> seen;
    for (const auto& b : a)
        for (const auto& s : b.seqs) seen.insert(s.learner_id);
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_NE(a, make_batches(seqs, 4, 5, 18));
}

TEST(Augment, PositiveViewCounts) {
    const auto b = sample_batch(50);
    const auto p = augment_positive(b, 0.2, 0.1, 3);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        if (!b.seqs[0].valid[i]) {
            EXPECT_EQ(p.seqs[0].concepts[i], b.seqs[0].concepts[i]);
            EXPECT_EQ(p.states[0][i], b.states[0][i]);
            continue;
        }
        if (p.seqs[0].concepts[i] == b.mask_concept()) {
            ++masked;
            EXPECT_EQ(p.states[0][i], b.mask_state());
        }
    }
    EXPECT_EQ(masked, 10u);
    // responses are a permutation of the original (swaps only)
    auto r0 = b.seqs[0].responses, r1 = p.seqs[0].responses;
    std::sort(r0.begin(), r0.end());
    std::sort(r1.begin(), r1.end());
    EXPECT_EQ(r0, r1);
    EXPECT_EQ(p, augment_positive(b, 0.2, 0.1, 3));
}

TEST(Augment, SwapOnlyMovesFiveAdjacentPairs) {
    // Distinct exercise ids so every swap is visible.
    std::vector<Interaction> l;
    for (int i = 0; i < 50; ++i) l.push_back({"u", i, i, i % 5, i % 2});
    const auto b = make_batch(window_sequences(l, 50), 5);
    const auto p = augment_positive(b, 0.0, 0.1, 9);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < 50; ++i) moved += p.seqs[0].exercises[i] != static_cast<int>(i);
    EXPECT_GE(moved, 2u);
    EXPECT_LE(moved, 10u);
    for (std::size_t i = 0; i < 50; ++i)
        EXPECT_LE(std::abs(p.seqs[0].exercises[i] - static_cast<int>(i)), 5);
}

TEST(Augment, ZeroRatesAreIdentity) {
    const auto b = sample_batch(30);
    EXPECT_EQ(augment_positive(b, 0.0, 0.0, 1), b);
    EXPECT_THROW(augment_positive(b, 0.6, 0.0, 1), std::invalid_argument);
}

TEST(Augment, NegativeViewIsAnInvolution) {
    const auto b = sample_batch(40);
    const auto n = augment_negative(b);
    for (std::size_t i = 0; i < 40; ++i) {
        EXPECT_EQ(n.seqs[0].responses[i], 1 - b.seqs[0].responses[i]);
        EXPECT_EQ(n.states[0][i], state_id(b.seqs[0].concepts[i], 1 - b.seqs[0].responses[i], 5));
    }
    EXPECT_EQ(augment_negative(n), b);
}

TEST(Cache, RoundTripAndSplit) {
    synth::SynthConfig sc;
    sc.learners = 40;
    LoadResult lr;
    lr.learners = synth::generate(sc);
    lr.vocab.num_concepts = sc.concepts;
    lr.vocab.num_exercises = sc.concepts * sc.exercises_per_concept;
    for (int i = 0; i < lr.vocab.num_concepts; ++i) lr.vocab.concept_raw_ids.push_back(i);
    for (int i = 0; i < lr.vocab.num_exercises; ++i) lr.vocab.exercise_raw_ids.push_back(i);
    const auto ds = build_dataset(lr, 64);
    const auto bytes = encode_cache(ds);
    const auto back = decode_cache(bytes);
    EXPECT_EQ(back.windows, ds.windows);
    EXPECT_EQ(back.vocab.concept_raw_ids, ds.vocab.concept_raw_ids);
    EXPECT_EQ(back.max_len, 64u);
    EXPECT_EQ(encode_cache(back), bytes);
    EXPECT_THROW(decode_cache(bytes.substr(0, bytes.size() - 3)), std::runtime_error);

    const auto s = split_by_learner(ds, 5);
    std::set<std::string> tr, va, te;
    for (const auto& w : s.train) tr.insert(w.learner_id);
    for (const auto& w : s.valid) va.insert(w.learner_id);
    for (const auto& w : s.test) te.insert(w.learner_id);
    EXPECT_EQ(tr.size(), 29u);  // round(0.72 * 40)
    EXPECT_EQ(va.size(), 3u);   // round(0.08 * 40)
    EXPECT_EQ(te.size(), 8u);
    for (const auto& id : tr) EXPECT_FALSE(va.count(id) || te.count(id));
    for (const auto& id : va) EXPECT_FALSE(te.count(id));
    EXPECT_EQ(s.train.size() + s.valid.size() + s.test.size(), ds.windows.size());
}

TEST(Synth, RulesFollowExposure) {
    synth::SynthConfig sc;
    sc.learners = 3;
    sc.rule = synth::Rule::SeenBefore;
    for (const auto& l : synth::generate(sc)) {
        std::set<int> seen;
        for (const auto& it : l) {
            EXPECT_EQ(it.response, seen.count(it.concept_id) ? 1 : 0);
            seen.insert(it.concept_id);
        }
    }
    EXPECT_EQ(synth::rule_response(synth::Rule::MasteredAfterK, 1, 2), 0);
    EXPECT_EQ(synth::rule_response(synth::Rule::MasteredAfterK, 2, 2), 1);
    EXPECT_EQ(synth::rule_response(synth::Rule::AlwaysCorrect, 0, 2), 1);
    EXPECT_THROW(synth::parse_rule("sometimes"), std::invalid_argument);
}

TEST(Synth, CsvParsesBack) {
    synth::SynthConfig sc;
    sc.learners = 5;
    const auto learners = synth::generate(sc);
    std::stringstream ss;
    synth::write_csv(ss, learners);
    const auto r = parse_interactions(ss);
    ASSERT_EQ(r.learners.size(), 5u);
    for (std::size_t l = 0; l < 5; ++l) {
        ASSERT_EQ(r.learners[l].size(), learners[l].size());
        for (std::size_t i = 0; i < learners[l].size(); ++i)
            EXPECT_EQ(r.learners[l][i].response, learners[l][i].response);
    }
}
