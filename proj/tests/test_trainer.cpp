#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "alignkt/synth.hpp"
#include "alignkt/trainer.hpp"

using namespace alignkt;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    data::Dataset ds;
    data::Split split;
};

Fixture small_data(int learners = 20) {
    synth::SynthConfig sc;
    sc.learners = learners;
    sc.concepts = 4;
    sc.exercises_per_concept = 2;
    sc.min_len = 6;
    sc.max_len = 14;
    data::LoadResult lr;
    lr.learners = synth::generate(sc);
    lr.vocab.num_concepts = sc.concepts;
    lr.vocab.num_exercises = sc.concepts * sc.exercises_per_concept;
    Fixture f;
    f.ds = data::build_dataset(lr, 10);
    f.split = data::split_by_learner(f.ds, 3);
    return f;
}

TrainConfig small_config() {
    TrainConfig c;
    c.model.d = 8;
    c.model.heads = 2;
    c.model.L = 5;
    c.epochs = 2;
    c.batch_size = 4;
    c.seed = 9;
    return c;
}

std::string slurp(const fs::path& p) { return nc::detail::read_file(p.string()); }

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("alignkt_test_" + name + "_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Config, TextRoundTripAndErrors) {
    TrainConfig c;
    apply_config_text(c, "# comment\nd = 32\nlambda=0.25\n\ndisable_cl=true\n");
    EXPECT_EQ(c.model.d, 32);
    EXPECT_EQ(c.lambda, 0.25);
    EXPECT_TRUE(c.disable_cl);
    const auto back = config_from_text(config_to_text(c));
    EXPECT_EQ(config_to_text(back), config_to_text(c));
    EXPECT_THROW(set_config_value(c, "no_such_key", "1"), ConfigError);
    EXPECT_THROW(set_config_value(c, "d", "abc"), ConfigError);
    EXPECT_THROW(apply_config_text(c, "d 3\n"), ConfigError);
}

TEST(Config, AblationFlagsResolve) {
    TrainConfig c;
    c.disable_tcba = c.disable_mrme = true;
    const auto r = c.resolved();
    EXPECT_FALSE(r.model.use_tcba);
    EXPECT_FALSE(r.model.use_mrme);
    EXPECT_TRUE(c.contrastive_active());
    c.lambda = 0.0;
    EXPECT_FALSE(c.contrastive_active());
}

TEST(Config, Validation) {
    TrainConfig c;
    c.model.num_concepts = 3;
    c.model.num_exercises = 3;
    c.model.heads = 7;
    EXPECT_THROW(c.model.validate(), ConfigError);
    c = TrainConfig{};
    c.tau = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Variants, AllSupportedAndUnknownRejected) {
    const auto& v = ablation_variants();
    EXPECT_EQ(v.size(), 5u);
    for (const auto& name : v) EXPECT_NO_THROW(apply_variant({}, name));
    EXPECT_THROW(apply_variant({}, "-M"), std::invalid_argument);
    EXPECT_THROW(apply_variant({}, "-T-M"), std::invalid_argument);
    const auto all = apply_variant({}, "-T-M-CL").resolved();
    EXPECT_FALSE(all.model.use_tcba);
    EXPECT_FALSE(all.model.use_mrme);
    EXPECT_FALSE(all.contrastive_active());
}

TEST(TrainingLoss, ContrastiveTermsOnlyWhenActive) {
    auto f = small_data();
    auto cfg = resolve_for_data(small_config(), f.ds.vocab);
    AlignKT m(cfg.model, cfg.seed);
    const auto batch = data::make_batch({f.split.train[0], f.split.train[1]}, cfg.model.num_concepts);
    const auto on = training_loss(m, batch, cfg, 1, m.context(false));
    EXPECT_GT(on.cl_c, 0.0);
    EXPECT_GT(on.cl_s, 0.0);
    EXPECT_NEAR(on.total, on.bce + cfg.lambda * (on.cl_c + on.cl_s), 1e-15);
    cfg.disable_cl = true;
    const auto off = training_loss(m, batch, cfg, 1, m.context(false));
    EXPECT_EQ(off.cl_c, 0.0);
    EXPECT_EQ(off.bce, on.bce);
    EXPECT_EQ(off.total, off.bce);
}

TEST(Train, LambdaZeroEqualsDisabledContrastive) {
    auto f = small_data();
    auto a = small_config();
    a.lambda = 0.0;
    auto b = small_config();
    b.disable_cl = true;
    const auto ra = train(a, f.ds.vocab, f.split);
    const auto rb = train(b, f.ds.vocab, f.split);
    ASSERT_EQ(ra.history.size(), rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
        EXPECT_EQ(ra.history[i].bce, rb.history[i].bce);
        EXPECT_EQ(ra.history[i].auc, rb.history[i].auc);
    }
    EXPECT_EQ(nc::encode_checkpoint(ra.model->params(), ""), nc::encode_checkpoint(rb.model->params(), ""));
}

TEST(Train, DeterministicLogsAndCheckpoints) {
    auto f = small_data();
    const auto dir = temp_dir("det");
    for (const char* run : {"a", "b"}) {
        TrainOptions opt;
        opt.checkpoint_path = (dir / (std::string(run) + ".ckpt")).string();
        opt.metrics_path = (dir / (std::string(run) + ".csv")).string();
        train(small_config(), f.ds.vocab, f.split, opt);
    }
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    EXPECT_EQ(slurp(dir / "a.csv").rfind(metrics_header(), 0), 0u);
}

TEST(Train, CheckpointReloadReproducesEvaluation) {
    auto f = small_data();
    const auto dir = temp_dir("reload");
    TrainOptions opt;
    opt.checkpoint_path = (dir / "m.ckpt").string();
    const auto res = train(small_config(), f.ds.vocab, f.split, opt);
    const auto before = evaluate(*res.model, f.split.test);
    auto loaded = load_model(opt.checkpoint_path);
    EXPECT_EQ(config_to_text(loaded.config), config_to_text(res.config));
    EXPECT_EQ(evaluate(*loaded.model, f.split.test), before);
    EXPECT_GT(before.n_predictions, 0u);
}

TEST(Train, EarlyStoppingHonoursPatience) {
    auto f = small_data();
    auto cfg = small_config();
    cfg.epochs = 50;
    cfg.patience = 1;
    const auto res = train(cfg, f.ds.vocab, f.split);
    EXPECT_TRUE(res.early_stopped || res.history.size() == 50u);
    if (res.early_stopped) {
        EXPECT_EQ(res.history.size(), static_cast<std::size_t>(res.best_epoch) + 1);
    }
    double best = -1.0;
    for (const auto& h : res.history) best = std::max(best, h.auc);
    EXPECT_EQ(best, res.best_valid_auc);
}

TEST(Train, BestParametersAreKept) {
    auto f = small_data();
    auto cfg = small_config();
    cfg.epochs = 4;
    const auto res = train(cfg, f.ds.vocab, f.split);
    EXPECT_EQ(evaluate(*res.model, f.split.valid).auc, res.best_valid_auc);
}

TEST(Train, AblationsRunAndReportDeltas) {
    auto f = small_data();
    auto cfg = small_config();
    cfg.epochs = 1;
    const auto rows = run_ablation(cfg, ablation_variants(), f.ds.vocab, f.split);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0].variant, "base");
    EXPECT_EQ(rows[0].delta_auc, 0.0);
    for (std::size_t i = 1; i < rows.size(); ++i)
        EXPECT_NEAR(rows[i].delta_auc, rows[i].report.auc - rows[0].report.auc, 1e-15);
    EXPECT_THROW(run_ablation(cfg, {"-X"}, f.ds.vocab, f.split), std::invalid_argument);
}

TEST(Evaluate, MatchesPooledPredictions) {
    auto f = small_data();
    auto cfg = resolve_for_data(small_config(), f.ds.vocab);
    AlignKT m(cfg.model, cfg.seed);
    const auto p = predict_all(m, f.split.test);
    std::size_t expected = 0;
    for (const auto& w : f.split.test) expected += w.length() - 1;
    EXPECT_EQ(p.probs.size(), expected);
    const auto r = evaluate(m, f.split.test);
    EXPECT_EQ(r.auc, auc(p.probs, p.labels));
    EXPECT_EQ(r.acc, accuracy(p.probs, p.labels));
}
