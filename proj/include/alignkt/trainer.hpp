#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/config.hpp"
#include "alignkt/dataio.hpp"
#include "alignkt/losses.hpp"
#include "alignkt/metrics.hpp"
#include "alignkt/model.hpp"
#include "alignkt/numcore/adam.hpp"
#include "alignkt/numcore/checkpoint.hpp"

namespace alignkt {

struct TrainingAborted : std::runtime_error {
    TrainingAborted(const std::string& why, int epoch, std::size_t batch)
        : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                             ": " + why),
          epoch(epoch),
          batch(batch) {}
    int epoch;
    std::size_t batch;
};

struct EvalReport {
    double auc = 0.0;
    double acc = 0.0;
    std::size_t n_predictions = 0;
    bool operator==(const EvalReport&) const = default;
};

struct Predictions {
    std::vector<double> probs;
    std::vector<int> labels;
};

// Predictions for steps 2..t of every window, pooled; dropout off.
inline Predictions predict_all(AlignKT& model, const std::vector<data::InteractionSequence>& seqs) {
    nc::NoGradGuard no_grad;
    const auto ctx = model.context(false);
    Predictions out;
    if (seqs.empty()) return out;
    const auto memory = model.ideal_memory(ctx);
    const auto batch = data::make_batch(seqs, model.config().num_concepts);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto in = sequence_input(batch, i);
        if (in.length() < 2) continue;
        const auto res = model.forward(in, ctx, &memory);
        for (std::size_t t = 0; t + 1 < in.length(); ++t) {
            out.probs.push_back(res.predictions.value()[t]);
            out.labels.push_back(in.responses[t + 1]);
        }
    }
    return out;
}

inline EvalReport evaluate(AlignKT& model, const std::vector<data::InteractionSequence>& seqs) {
    const auto p = predict_all(model, seqs);
    EvalReport r;
    r.n_predictions = p.probs.size();
    r.auc = auc(p.probs, p.labels);
    r.acc = accuracy(p.probs, p.labels);
    return r;
}

// Seed for the contrastive augmentation of one batch.
inline std::uint64_t augmentation_seed(std::uint64_t seed, int epoch, std::size_t batch) {
    std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) * 0xbf58476d1ce4e5b9ULL +
                      static_cast<std::uint64_t>(batch) * 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// Full objective on one batch: pooled BCE over every valid target step plus,
// when contrastive learning is active, lambda times the two InfoNCE terms on
// mean-pooled concept/state encoder outputs.
inline LossReport training_loss(AlignKT& model, const data::Batch& batch, const TrainConfig& cfg,
                                std::uint64_t aug_seed, const ForwardContext& ctx) {
    const auto memory = model.ideal_memory(ctx);
    std::vector<nc::Tensor> preds;
    std::vector<double> targets;
    std::vector<SequenceInput> inputs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        inputs.push_back(sequence_input(batch, i));
        const auto& in = inputs.back();
        if (in.length() < 2) throw std::invalid_argument("training_loss: window with fewer than 2 steps");
        preds.push_back(model.forward(in, ctx, &memory).predictions);
        for (std::size_t t = 1; t < in.length(); ++t) targets.push_back(in.responses[t]);
    }
    auto all_preds = nc::concat_rows(preds);
    const std::vector<std::uint8_t> valid(targets.size(), 1);
    auto bce = bce_loss(all_preds, targets, valid);
    if (!cfg.contrastive_active()) return total_loss(bce, {}, {}, cfg.lambda, cfg.tau);

    const auto pos = data::augment_positive(batch, cfg.rho_mask, cfg.rho_swap, aug_seed);
    const auto neg = data::augment_negative(batch);
    std::vector<nc::Tensor> c_anchor, c_pos, c_neg, s_anchor, s_pos, s_neg;
    auto pooled = [&](const SequenceInput& in, std::vector<nc::Tensor>& c_out, std::vector<nc::Tensor>& s_out) {
        auto [ce, se] = model.encode_views(in, ctx);
        const std::vector<double> w(ce.rows(), 1.0);
        c_out.push_back(nc::masked_mean_rows(ce, w));
        s_out.push_back(nc::masked_mean_rows(se, w));
    };
    for (std::size_t i = 0; i < batch.size(); ++i) {
        pooled(inputs[i], c_anchor, s_anchor);
        pooled(sequence_input(pos, i), c_pos, s_pos);
        pooled(sequence_input(neg, i), c_neg, s_neg);
    }
    auto cl_c = infonce(c_anchor, c_pos, c_neg, cfg.tau);
    auto cl_s = infonce(s_anchor, s_pos, s_neg, cfg.tau);
    return total_loss(bce, cl_c, cl_s, cfg.lambda, cfg.tau);
}

// ---------------------------------------------------------------------------
// Checkpoints: numcore container whose manifest is the resolved config.

inline std::string checkpoint_manifest(const TrainConfig& cfg) {
    return "format=alignkt-checkpoint-1\n" + config_to_text(cfg);
}

inline void save_model(const std::string& path, const AlignKT& model, const TrainConfig& cfg) {
    nc::save_checkpoint(path, model.params(), checkpoint_manifest(cfg));
}

struct LoadedModel {
    TrainConfig config;
    std::unique_ptr<AlignKT> model;
};

inline LoadedModel load_model(const std::string& path) {
    const auto ck = nc::read_checkpoint(path);
    std::string text = ck.manifest;
    const std::string tag = "format=alignkt-checkpoint-1\n";
    if (text.rfind(tag, 0) != 0) throw std::runtime_error("checkpoint: unrecognised manifest in '" + path + "'");
    LoadedModel lm;
    lm.config = config_from_text(text.substr(tag.size()));
    lm.model = std::make_unique<AlignKT>(lm.config.model, lm.config.seed);
    nc::load_into(lm.model->params(), ck);
    return lm;
}

// ---------------------------------------------------------------------------

struct EpochMetrics {
    int epoch = 0;
    double bce = 0.0;
    double cl_c = 0.0;
    double cl_s = 0.0;
    double total = 0.0;
    double auc = 0.0;  // validation
    double acc = 0.0;
};

inline std::string metrics_header() { return "epoch,bce,cl_c,cl_s,total,auc,acc\n"; }

inline std::string metrics_row(const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.bce, m.cl_c, m.cl_s, m.total,
                  m.auc, m.acc);
    return buf;
}

struct TrainOptions {
    std::string checkpoint_path;  // best-validation checkpoint; empty = keep in memory only
    std::string metrics_path;     // CSV log; empty = none
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    TrainConfig config;  // resolved, vocabulary filled in
    std::unique_ptr<AlignKT> model;  // holds the best-validation parameters
    std::vector<EpochMetrics> history;
    int best_epoch = 0;
    double best_valid_auc = 0.0;
    bool early_stopped = false;
};

inline TrainConfig resolve_for_data(const TrainConfig& base, const data::Vocab& vocab) {
    TrainConfig cfg = base.resolved();
    cfg.model.num_concepts = vocab.num_concepts;
    cfg.model.num_exercises = vocab.num_exercises;
    cfg.validate();
    cfg.model.validate();
    return cfg;
}

// Adam on the full objective; validation AUC picks the kept parameters and
// drives early stopping. Deterministic for a fixed seed.
inline TrainResult train(const TrainConfig& base, const data::Vocab& vocab, const data::Split& split,
                         const TrainOptions& opt = {}) {
    TrainResult res;
    res.config = resolve_for_data(base, vocab);
    const auto& cfg = res.config;
    if (split.train.empty()) throw std::invalid_argument("train: empty training split");
    res.model = std::make_unique<AlignKT>(cfg.model, cfg.seed);
    auto& model = *res.model;
    nc::AdamState adam(model.params(), {cfg.lr, 0.9, 0.999, 1e-8});

    std::ofstream metrics;
    if (!opt.metrics_path.empty()) {
        metrics.open(opt.metrics_path, std::ios::trunc);
        if (!metrics) throw std::runtime_error("cannot write metrics log '" + opt.metrics_path + "'");
        metrics << metrics_header();
    }

    const auto& selection = split.valid.empty() ? split.train : split.valid;
    nc::ParamStore best = model.params().clone();
    res.best_valid_auc = -1.0;
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = data::make_batches(split.train, static_cast<std::size_t>(cfg.batch_size),
                                                cfg.model.num_concepts, cfg.seed + static_cast<std::uint64_t>(epoch));
        EpochMetrics em;
        em.epoch = epoch;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            LossReport rep;
            try {
                const auto ctx = model.context(true);
                rep = training_loss(model, batches[b], cfg, augmentation_seed(cfg.seed, epoch, b), ctx);
                if (!std::isfinite(rep.total)) throw nc::NumericError("non-finite loss");
                rep.total_tensor.backward();
                nc::adam_step(model.params(), adam);
            } catch (const nc::NumericError& e) {
                throw TrainingAborted(e.what(), epoch, b);
            }
            em.bce += rep.bce;
            em.cl_c += rep.cl_c;
            em.cl_s += rep.cl_s;
            em.total += rep.total;
        }
        const double nb = static_cast<double>(batches.size());
        em.bce /= nb;
        em.cl_c /= nb;
        em.cl_s /= nb;
        em.total /= nb;
        const auto rep = evaluate(model, selection);
        em.auc = rep.auc;
        em.acc = rep.acc;
        res.history.push_back(em);
        if (metrics) metrics << metrics_row(em) << std::flush;
        if (opt.on_epoch) opt.on_epoch(em);

        if (em.auc > res.best_valid_auc) {
            res.best_valid_auc = em.auc;
            res.best_epoch = epoch;
            best.assign_from(model.params());
            since_best = 0;
            if (!opt.checkpoint_path.empty()) save_model(opt.checkpoint_path, model, cfg);
        } else if (++since_best >= cfg.patience) {
            res.early_stopped = true;
            break;
        }
    }
    model.params().assign_from(best);
    return res;
}

// ---------------------------------------------------------------------------
// Ablations. "-M" only ever appears together with "-CL".

inline const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v{"-T", "-CL", "-M-CL", "-T-CL", "-T-M-CL"};
    return v;
}

inline TrainConfig apply_variant(TrainConfig cfg, const std::string& variant) {
    if (variant == "base" || variant.empty()) return cfg;
    if (variant == "-T") {
        cfg.disable_tcba = true;
    } else if (variant == "-CL") {
        cfg.disable_cl = true;
    } else if (variant == "-M-CL") {
        cfg.disable_mrme = cfg.disable_cl = true;
    } else if (variant == "-T-CL") {
        cfg.disable_tcba = cfg.disable_cl = true;
    } else if (variant == "-T-M-CL") {
        cfg.disable_tcba = cfg.disable_mrme = cfg.disable_cl = true;
    } else {
        throw std::invalid_argument("unsupported ablation variant '" + variant + "' (expected -T, -CL, -M-CL, -T-CL, -T-M-CL)");
    }
    return cfg;
}

struct AblationResult {
    std::string variant;
    EvalReport report;
    double delta_auc = 0.0;  // variant minus base
};

inline std::vector<AblationResult> run_ablation(const TrainConfig& base, const std::vector<std::string>& variants,
                                                const data::Vocab& vocab, const data::Split& split,
                                                const std::function<void(const std::string&)>& progress = {}) {
    for (const auto& v : variants) apply_variant(base, v);
    std::vector<AblationResult> out;
    auto run = [&](const std::string& v) {
        if (progress) progress(v);
        auto tr = train(apply_variant(base, v), vocab, split);
        const auto& eval_set = split.test.empty() ? split.valid : split.test;
        return AblationResult{v, evaluate(*tr.model, eval_set), 0.0};
    };
    auto base_res = run("base");
    out.push_back(base_res);
    for (const auto& v : variants) {
        auto r = run(v);
        r.delta_auc = r.report.auc - base_res.report.auc;
        out.push_back(r);
    }
    return out;
}

}  // namespace alignkt
