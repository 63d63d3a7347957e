#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <type_traits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace alignkt {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Architecture hyperparameters. Vocabulary sizes come from the data.
struct ModelConfig {
    int num_concepts = 0;
    int num_exercises = 0;
    int d = 64;
    int heads = 8;
    int blocks = 1;  // encoder blocks per encoder
    int ffn_mult = 4;
    double dropout = 0.1;
    double a1 = 0.8;
    double a2 = 0.5;
    int L = 40;
    double gamma_init = 1.0;
    double tcba_eps = 1e-2;
    double init_std = 0.02;
    bool use_tcba = true;
    bool use_mrme = true;

    void validate() const {
        if (num_concepts < 1) throw ConfigError("num_concepts must be >= 1");
        if (num_exercises < 1) throw ConfigError("num_exercises must be >= 1");
        if (d < 1 || heads < 1 || d % heads != 0) throw ConfigError("d must be a positive multiple of heads");
        if (blocks < 1 || ffn_mult < 1) throw ConfigError("blocks and ffn_mult must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
        if (a1 < 0.0 || a1 > 1.0 || a2 < 0.0 || a2 > 1.0) throw ConfigError("a1 and a2 must lie in [0, 1]");
        if (L < 1) throw ConfigError("L must be >= 1");
        if (gamma_init <= 0.0) throw ConfigError("gamma_init must be positive");
        if (tcba_eps <= 0.0) throw ConfigError("tcba_eps must be positive");
    }
};

struct TrainConfig {
    ModelConfig model;
    int max_len = 200;
    int epochs = 200;
    int batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 42;
    double lambda = 0.1;
    double tau = 0.05;
    double rho_mask = 0.2;
    double rho_swap = 0.1;
    int patience = 10;
    bool disable_tcba = false;
    bool disable_cl = false;
    bool disable_mrme = false;

    // Ablation flags folded into the concrete settings.
    TrainConfig resolved() const {
        TrainConfig r = *this;
        if (r.disable_mrme) {
            r.model.a1 = 0.0;
            r.model.a2 = 0.0;
            r.model.use_mrme = false;
        }
        if (r.disable_tcba) r.model.use_tcba = false;
        if (r.disable_cl) r.lambda = 0.0;
        return r;
    }

    // Contrastive views are built only when they can reach the loss.
    bool contrastive_active() const { return !disable_cl && lambda > 0.0; }

    void validate() const {
        if (max_len < 2) throw ConfigError("max_len must be >= 2");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (lr <= 0.0) throw ConfigError("lr must be positive");
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
        if (tau <= 0.0) throw ConfigError("tau must be positive");
        if (rho_mask < 0.0 || rho_mask > 0.5 || rho_swap < 0.0 || rho_swap > 0.5)
            throw ConfigError("rho_mask and rho_swap must lie in [0, 0.5]");
        if (patience < 1) throw ConfigError("patience must be >= 1");
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("value for '" + key + "' is not a number: '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("value for '" + key + "' is not a number: '" + v + "'");
    return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("value for '" + key + "' is not an integer: '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("value for '" + key + "' is not an integer: '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("value for '" + key + "' is not a boolean: '" + v + "'");
}

struct Field {
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto num = [&t](const std::string& k, auto member_of) {
            t[k] = {[member_of](const TrainConfig& c) { return fmt_double(*member_of(const_cast<TrainConfig&>(c))); },
                    [member_of, k](TrainConfig& c, const std::string& v) { *member_of(c) = to_double(k, v); }};
        };
        auto integer = [&t](const std::string& k, auto member_of) {
            t[k] = {[member_of](const TrainConfig& c) {
                        return std::to_string(*member_of(const_cast<TrainConfig&>(c)));
                    },
                    [member_of, k](TrainConfig& c, const std::string& v) {
                        using T = std::remove_reference_t<decltype(*member_of(c))>;
                        const long long x = to_int(k, v);
                        if (std::is_unsigned_v<T> && x < 0) throw ConfigError("'" + k + "' must be non-negative");
                        *member_of(c) = static_cast<T>(x);
                    }};
        };
        auto flag = [&t](const std::string& k, auto member_of) {
            t[k] = {[member_of](const TrainConfig& c) {
                        return std::string(*member_of(const_cast<TrainConfig&>(c)) ? "true" : "false");
                    },
                    [member_of, k](TrainConfig& c, const std::string& v) { *member_of(c) = to_bool(k, v); }};
        };
        integer("num_concepts", [](TrainConfig& c) { return &c.model.num_concepts; });
        integer("num_exercises", [](TrainConfig& c) { return &c.model.num_exercises; });
        integer("d", [](TrainConfig& c) { return &c.model.d; });
        integer("heads", [](TrainConfig& c) { return &c.model.heads; });
        integer("blocks", [](TrainConfig& c) { return &c.model.blocks; });
        integer("ffn_mult", [](TrainConfig& c) { return &c.model.ffn_mult; });
        num("dropout", [](TrainConfig& c) { return &c.model.dropout; });
        num("a1", [](TrainConfig& c) { return &c.model.a1; });
        num("a2", [](TrainConfig& c) { return &c.model.a2; });
        integer("L", [](TrainConfig& c) { return &c.model.L; });
        num("gamma_init", [](TrainConfig& c) { return &c.model.gamma_init; });
        num("tcba_eps", [](TrainConfig& c) { return &c.model.tcba_eps; });
        num("init_std", [](TrainConfig& c) { return &c.model.init_std; });
        flag("use_tcba", [](TrainConfig& c) { return &c.model.use_tcba; });
        flag("use_mrme", [](TrainConfig& c) { return &c.model.use_mrme; });
        integer("max_len", [](TrainConfig& c) { return &c.max_len; });
        integer("epochs", [](TrainConfig& c) { return &c.epochs; });
        integer("batch_size", [](TrainConfig& c) { return &c.batch_size; });
        num("lr", [](TrainConfig& c) { return &c.lr; });
        integer("seed", [](TrainConfig& c) { return &c.seed; });
        num("lambda", [](TrainConfig& c) { return &c.lambda; });
        num("tau", [](TrainConfig& c) { return &c.tau; });
        num("rho_mask", [](TrainConfig& c) { return &c.rho_mask; });
        num("rho_swap", [](TrainConfig& c) { return &c.rho_swap; });
        integer("patience", [](TrainConfig& c) { return &c.patience; });
        flag("disable_tcba", [](TrainConfig& c) { return &c.disable_tcba; });
        flag("disable_cl", [](TrainConfig& c) { return &c.disable_cl; });
        flag("disable_mrme", [](TrainConfig& c) { return &c.disable_mrme; });
        return t;
    }();
    return table;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : detail::fields()) keys.push_back(k);
    return keys;
}

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) {
        std::string valid;
        for (const auto& [k, _] : f) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
    }
    it->second.set(cfg, detail::trim(value));
}

// Flat `key = value` text; '#' starts a comment.
inline void apply_config_text(TrainConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        set_config_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(base, ss.str());
    return base;
}

// Every key, sorted, one `key=value` per line. Round-trips exactly.
inline std::string config_to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [k, f] : detail::fields()) out += k + "=" + f.get(cfg) + "\n";
    return out;
}

inline TrainConfig config_from_text(const std::string& text) {
    TrainConfig cfg;
    apply_config_text(cfg, text);
    return cfg;
}

}  // namespace alignkt
