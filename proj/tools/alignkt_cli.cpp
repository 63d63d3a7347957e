#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "alignkt/alignkt.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace alignkt;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kParse = 3;
constexpr int kConfig = 4;
constexpr int kRuntime = 5;

std::string sha256_file(const std::string& path) {
    const auto bytes = nc::detail::read_file(path);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
        throw std::runtime_error("sha256 failed for '" + path + "'");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

json config_json(const TrainConfig& cfg) {
    json j = json::object();
    std::istringstream in(config_to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// Config file first, then one flag per config key, then --set pairs.
struct ConfigSources {
    std::string file;
    std::map<std::string, std::string> flags;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "key=value config file")->check(CLI::ExistingFile);
        for (const auto& key : config_keys())
            cmd->add_option("--" + key, flags[key], "override config key '" + key + "'")->group("Config keys");
        cmd->add_option("--set", sets, "override any config key as key=value (repeatable)");
    }

    TrainConfig resolve(TrainConfig base = {}) const {
        TrainConfig cfg = file.empty() ? base : load_config_file(file, base);
        for (const auto& [k, v] : flags)
            if (!v.empty()) set_config_value(cfg, k, v);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
        }
        return cfg;
    }
};

json run_manifest(const std::string& command, const TrainConfig& cfg, const std::string& cache,
                  const std::string& config_file, json artifacts) {
    json m;
    m["format"] = "alignkt-run-1";
    m["command"] = command;
    m["seed"] = cfg.seed;
    m["config"] = config_json(cfg);
    m["config_text"] = config_to_text(cfg);
    json inputs;
    inputs["cache"] = {{"path", fs::absolute(cache).string()}, {"sha256", sha256_file(cache)}};
    if (!config_file.empty())
        inputs["config"] = {{"path", fs::absolute(config_file).string()}, {"sha256", sha256_file(config_file)}};
    m["inputs"] = inputs;
    m["artifacts"] = std::move(artifacts);
    return m;
}

int cmd_preprocess(const std::string& input, const std::string& out, int max_len) {
    const auto loaded = data::load_interactions(input);
    if (loaded.learners.empty()) throw data::ParseError("no learner with at least 2 valid interactions", 0);
    const auto ds = data::build_dataset(loaded, static_cast<std::size_t>(max_len));
    data::save_cache(out, ds);

    std::size_t interactions = 0;
    for (const auto& l : loaded.learners) interactions += l.size();
    const double avg = static_cast<double>(interactions) / static_cast<double>(loaded.learners.size());
    json m;
    m["format"] = "alignkt-cache-1";
    m["N_e"] = ds.vocab.num_exercises;
    m["N_c"] = ds.vocab.num_concepts;
    m["max_len"] = max_len;
    m["learners"] = loaded.learners.size();
    m["windows"] = ds.windows.size();
    m["interactions"] = interactions;
    m["avg_length"] = avg;
    m["rows_read"] = loaded.rows_read;
    m["rejected_rows"] = loaded.rejected_rows;
    m["dropped_learners"] = loaded.dropped_learners;
    m["input_sha256"] = sha256_file(input);
    write_text(out + ".json", m.dump(2) + "\n");

    std::printf("learners       %zu\n", loaded.learners.size());
    std::printf("windows        %zu\n", ds.windows.size());
    std::printf("interactions   %zu\n", interactions);
    std::printf("N_e            %d\n", ds.vocab.num_exercises);
    std::printf("N_c            %d\n", ds.vocab.num_concepts);
    std::printf("avg length     %.2f\n", avg);
    if (loaded.rejected_rows || loaded.dropped_learners)
        std::printf("rejected rows  %zu, dropped learners %zu\n", loaded.rejected_rows, loaded.dropped_learners);
    std::printf("wrote %s and %s.json\n", out.c_str(), out.c_str());
    return kOk;
}

int cmd_train(const std::string& cache, const TrainConfig& base, const std::string& config_file, const fs::path& out) {
    const auto ds = data::load_cache(cache);
    const auto split = data::split_by_learner(ds, base.seed);
    const auto cfg = resolve_for_data(base, ds.vocab);
    fs::create_directories(out);
    const auto ckpt = (out / "model.ckpt").string();
    const auto metrics = (out / "metrics.csv").string();
    const auto manifest_path = out / "run_manifest.json";
    json artifacts{{"checkpoint", ckpt}, {"metrics", metrics}, {"manifest", manifest_path.string()}};
    write_text(manifest_path, run_manifest("train", cfg, cache, config_file, artifacts).dump(2) + "\n");

    std::printf("train %zu windows, valid %zu, test %zu\n", split.train.size(), split.valid.size(), split.test.size());
    TrainOptions opt;
    opt.checkpoint_path = ckpt;
    opt.metrics_path = metrics;
    opt.on_epoch = [](const EpochMetrics& m) {
        std::printf("epoch %3d  bce %.4f  cl_c %.4f  cl_s %.4f  total %.4f  val auc %.4f  acc %.4f\n", m.epoch, m.bce,
                    m.cl_c, m.cl_s, m.total, m.auc, m.acc);
        std::fflush(stdout);
    };
    const auto res = train(cfg, ds.vocab, split, opt);
    std::printf("best epoch %d, val auc %.4f%s\n", res.best_epoch, res.best_valid_auc,
                res.early_stopped ? " (early stop)" : "");
    if (!split.test.empty()) {
        const auto r = evaluate(*res.model, split.test);
        std::printf("test auc %.4f  acc %.4f  (%zu predictions)\n", r.auc, r.acc, r.n_predictions);
    }
    return kOk;
}

const std::vector<data::InteractionSequence>& pick_split(const data::Split& s, const std::vector<data::InteractionSequence>& all,
                                                         const std::string& which) {
    if (which == "train") return s.train;
    if (which == "valid") return s.valid;
    if (which == "test") return s.test;
    if (which == "all") return all;
    throw ConfigError("unknown split '" + which + "' (expected train|valid|test|all)");
}

int cmd_eval(const std::string& checkpoint, const std::string& cache, const std::string& which) {
    auto lm = load_model(checkpoint);
    const auto ds = data::load_cache(cache);
    if (ds.vocab.num_concepts != lm.config.model.num_concepts || ds.vocab.num_exercises != lm.config.model.num_exercises)
        throw ConfigError("cache vocabulary does not match the checkpoint");
    const auto split = data::split_by_learner(ds, lm.config.seed);
    const auto r = evaluate(*lm.model, pick_split(split, ds.windows, which));
    std::printf("split %s  auc %.4f  acc %.4f  predictions %zu\n", which.c_str(), r.auc, r.acc, r.n_predictions);
    return kOk;
}

int cmd_ablate(const std::string& cache, const TrainConfig& base, const std::string& config_file,
               std::vector<std::string> variants, const std::string& label, const std::string& out) {
    const auto ds = data::load_cache(cache);
    if (variants.empty()) variants = ablation_variants();
    for (const auto& v : variants) apply_variant(base, v);
    const auto split = data::split_by_learner(ds, base.seed);
    if (!out.empty()) {
        fs::create_directories(out);
        json artifacts{{"table", (fs::path(out) / "ablation.txt").string()}};
        auto m = run_manifest("ablate", resolve_for_data(base, ds.vocab), cache, config_file, artifacts);
        m["variants"] = variants;
        write_text(fs::path(out) / "run_manifest.json", m.dump(2) + "\n");
    }
    const auto rows = run_ablation(base, variants, ds.vocab, split, [](const std::string& v) {
        std::fprintf(stderr, "training %s\n", v.c_str());
    });

    // Variants across, AlignKT last; AUC on the first line, delta to AlignKT below.
    std::string table;
    auto cell = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 1, ' '); };
    const std::size_t w0 = std::max<std::size_t>(9, label.size() + 2), w = 10;
    table += cell("Dataset", w0);
    for (std::size_t i = 1; i < rows.size(); ++i) table += cell(rows[i].variant, w);
    table += "AlignKT\n";
    table += cell(label, w0);
    for (std::size_t i = 1; i < rows.size(); ++i) table += cell(fmt4(rows[i].report.auc), w);
    table += fmt4(rows[0].report.auc) + "\n";
    table += cell("", w0);
    for (std::size_t i = 1; i < rows.size(); ++i) table += cell(fmt4(rows[i].delta_auc), w);
    table += "\n";
    std::fputs(table.c_str(), stdout);
    if (!out.empty()) write_text(fs::path(out) / "ablation.txt", table);
    return kOk;
}

int cmd_export_state(const std::string& checkpoint, const std::string& cache, const std::string& learner, int window,
                     const std::string& mode_name, const std::string& out) {
    const auto mode = parse_state_mode(mode_name);
    auto lm = load_model(checkpoint);
    const auto ds = data::load_cache(cache);
    if (ds.vocab.num_concepts != lm.config.model.num_concepts)
        throw ConfigError("cache vocabulary does not match the checkpoint");
    const data::InteractionSequence* seq = nullptr;
    for (const auto& w : ds.windows)
        if (w.learner_id == learner && w.window == window) seq = &w;
    if (!seq) throw std::runtime_error("learner '" + learner + "' (window " + std::to_string(window) + ") not in cache");
    const auto batch = data::make_batch({*seq}, ds.vocab.num_concepts);
    const auto ks = lm.model->knowledge_state_matrix(sequence_input(batch, 0), mode);

    std::string csv;
    for (int c = 0; c < ds.vocab.num_concepts; ++c) {
        if (c) csv += ',';
        csv += std::to_string(ds.vocab.concept_raw_ids.empty() ? c : ds.vocab.concept_raw_ids[static_cast<std::size_t>(c)]);
    }
    csv += '\n';
    char buf[32];
    for (std::size_t i = 0; i < ks.values.rows(); ++i) {
        for (std::size_t j = 0; j < ks.values.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", ks.values.at(i, j));
            if (j) csv += ',';
            csv += buf;
        }
        csv += '\n';
    }
    write_text(out, csv);
    std::printf("wrote %zu x %zu %s matrix to %s\n", ks.values.rows(), ks.values.cols(), mode_name.c_str(), out.c_str());
    return kOk;
}

int cmd_synth(const synth::SynthConfig& sc, const std::string& out) {
    const auto learners = synth::generate(sc);
    std::ostringstream csv;
    synth::write_csv(csv, learners);
    write_text(out, csv.str());
    json m{{"format", "alignkt-synth-1"},
           {"rule", synth::rule_name(sc.rule)},
           {"k", sc.k},
           {"learners", sc.learners},
           {"seed", sc.seed},
           {"concepts", sc.concepts},
           {"exercises_per_concept", sc.exercises_per_concept},
           {"min_len", sc.min_len},
           {"max_len", sc.max_len}};
    write_text(out + ".json", m.dump(2) + "\n");
    std::printf("wrote %d learners (%s) to %s\n", sc.learners, synth::rule_name(sc.rule).c_str(), out.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AlignKT knowledge tracing"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("preprocess", "CSV interactions -> windowed cache");
    std::string pre_in, pre_out;
    int pre_len = 200;
    pre->add_option("--input", pre_in, "interaction CSV")->required()->check(CLI::ExistingFile);
    pre->add_option("--out", pre_out, "cache file to write")->required();
    pre->add_option("--max-len", pre_len, "window length")->check(CLI::Range(2, 1 << 20));

    auto* tr = app.add_subcommand("train", "train on a cache; writes manifest, checkpoint and metrics");
    std::string tr_cache, tr_out, tr_manifest;
    ConfigSources tr_cfg;
    tr->add_option("--cache", tr_cache, "preprocessed cache");
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--from-manifest", tr_manifest, "re-run a previous train run_manifest.json")->check(CLI::ExistingFile);
    tr_cfg.attach(tr);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a cache");
    std::string ev_ckpt, ev_cache, ev_split = "test";
    ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--cache", ev_cache)->required()->check(CLI::ExistingFile);
    ev->add_option("--split", ev_split, "train|valid|test|all");

    auto* ab = app.add_subcommand("ablate", "train AlignKT and ablated variants, print AUC deltas");
    std::string ab_cache, ab_label = "data", ab_out;
    std::vector<std::string> ab_variants;
    ConfigSources ab_cfg;
    ab->add_option("--cache", ab_cache)->required()->check(CLI::ExistingFile);
    ab->add_option("--variant", ab_variants, "-T, -CL, -M-CL, -T-CL, -T-M-CL (repeatable; default all)")
        ->allow_extra_args(false);
    ab->add_option("--label", ab_label, "dataset label for the table");
    ab->add_option("--out", ab_out, "directory for manifest and table");
    ab_cfg.attach(ab);

    auto* ex = app.add_subcommand("export-state", "write a learner's knowledge-state matrix as CSV");
    std::string ex_ckpt, ex_cache, ex_learner, ex_mode = "readout", ex_out;
    int ex_window = 0;
    ex->add_option("--checkpoint", ex_ckpt)->required()->check(CLI::ExistingFile);
    ex->add_option("--cache", ex_cache)->required()->check(CLI::ExistingFile);
    ex->add_option("--learner", ex_learner)->required();
    ex->add_option("--window", ex_window, "window index for long learners");
    ex->add_option("--mode", ex_mode, "attention|readout");
    ex->add_option("--out", ex_out)->required();

    auto* sy = app.add_subcommand("synth", "generate rule-based synthetic interactions");
    synth::SynthConfig sc;
    std::string sy_rule = "seen-before", sy_out;
    sy->add_option("--learners", sc.learners)->check(CLI::PositiveNumber);
    sy->add_option("--seed", sc.seed);
    sy->add_option("--rule", sy_rule, "seen-before|mastered-after-k|always-correct");
    sy->add_option("--k", sc.k, "exposures needed by mastered-after-k");
    sy->add_option("--concepts", sc.concepts);
    sy->add_option("--exercises-per-concept", sc.exercises_per_concept);
    sy->add_option("--min-len", sc.min_len);
    sy->add_option("--max-len", sc.max_len);
    sy->add_option("--out", sy_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*pre) return cmd_preprocess(pre_in, pre_out, pre_len);
        if (*tr) {
            TrainConfig base;
            std::string cache = tr_cache, config_file = tr_cfg.file;
            if (!tr_manifest.empty()) {
                std::ifstream in(tr_manifest);
                const auto m = json::parse(in);
                base = config_from_text(m.at("config_text").get<std::string>());
                if (cache.empty()) cache = m.at("inputs").at("cache").at("path").get<std::string>();
                config_file.clear();
            } else {
                base = tr_cfg.resolve();
            }
            if (cache.empty()) throw ConfigError("train needs --cache (or --from-manifest)");
            if (!tr_manifest.empty()) base = tr_cfg.resolve(base);
            return cmd_train(cache, base, config_file, tr_out);
        }
        if (*ev) return cmd_eval(ev_ckpt, ev_cache, ev_split);
        if (*ab) return cmd_ablate(ab_cache, ab_cfg.resolve(), ab_cfg.file, ab_variants, ab_label, ab_out);
        if (*ex) return cmd_export_state(ex_ckpt, ex_cache, ex_learner, ex_window, ex_mode, ex_out);
        if (*sy) {
            sc.rule = synth::parse_rule(sy_rule);
            return cmd_synth(sc, sy_out);
        }
    } catch (const data::ParseError& e) {
        std::fprintf(stderr, "error: line %zu: %s\n", e.line, e.what());
        return kParse;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: manifest: %s\n", e.what());
        return kParse;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return kConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kUsage;
}
