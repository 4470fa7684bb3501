#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp" // vendored single-header JSON library (tools/ and tests/ put vendor/ on the include path)

#include "sll/pipeline.hpp"

namespace sll {

/// One experiment file: the full pipeline configuration plus the harness-level
/// knobs (seed list, sweep axis, output directory). Loaded from a flat JSON
/// object; unknown keys are rejected so typos fail loudly instead of silently
/// running with a default.
struct ExperimentConfig {
    PipelineConfig pipe = default_pipe();
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string axis = "s";
    std::vector<double> values{1, 2, 4, 8, 16, 32, 64, 128};
    std::string out_dir = "runs";

    // Reference defense operating point: these only act once the matching
    // toggles are enabled, so the plain-adapter path is unaffected.
    static PipelineConfig default_pipe() {
        PipelineConfig p;
        p.loss.lambda = 10.0;
        p.loss.dropout_p = 0.1;
        p.loss.subspace_k = 1;
        return p;
    }
};

/// Canonical comma list of the enabled regularizer toggles ("" when all off).
inline std::string toggles_text(const LossConfig& loss) {
    std::string out;
    auto add = [&out](const char* name) {
        if (!out.empty()) out += ',';
        out += name;
    };
    if (loss.cl) add("cl");
    if (loss.tr) add("tr");
    if (loss.pt) add("pt");
    return out;
}

/// Parses "cl,tr,pt"-style subsets; empty string disables everything.
inline void parse_toggles(const std::string& text, LossConfig& loss) {
    loss.cl = loss.tr = loss.pt = false;
    if (text.empty()) return;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        bool* flag = nullptr;
        if (tok == "cl") flag = &loss.cl;
        else if (tok == "tr") flag = &loss.tr;
        else if (tok == "pt") flag = &loss.pt;
        else throw ConfigError("toggles: expected a comma list drawn from cl,tr,pt; got '" + tok + "'");
        if (*flag) throw ConfigError("toggles: '" + tok + "' listed twice");
        *flag = true;
    }
}

namespace detail {

inline void want(bool ok, const std::string& key, const char* what) {
    if (!ok) throw ConfigError("config: key '" + key + "' must be " + what);
}

inline void get_int(const nlohmann::json& j, const std::string& key, int& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_number_integer(), key, "an integer");
    out = it->get<int>();
}

inline void get_seed(const nlohmann::json& j, const std::string& key, std::uint64_t& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_number_integer() && (it->is_number_unsigned() || it->get<std::int64_t>() >= 0),
         key, "a non-negative integer");
    out = it->get<std::uint64_t>();
}

inline void get_double(const nlohmann::json& j, const std::string& key, double& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_number() && !it->is_boolean(), key, "a number");
    out = it->get<double>();
}

inline void get_bool(const nlohmann::json& j, const std::string& key, bool& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_boolean(), key, "true or false");
    out = it->get<bool>();
}

inline void get_string(const nlohmann::json& j, const std::string& key, std::string& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_string(), key, "a string");
    out = it->get<std::string>();
}

inline void get_seed_list(const nlohmann::json& j, const std::string& key,
                          std::vector<std::uint64_t>& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_array() && !it->empty(), key, "a non-empty array of non-negative integers");
    std::vector<std::uint64_t> parsed;
    for (const auto& v : *it) {
        want(v.is_number_integer() && (v.is_number_unsigned() || v.get<std::int64_t>() >= 0),
             key, "a non-empty array of non-negative integers");
        parsed.push_back(v.get<std::uint64_t>());
    }
    out = std::move(parsed);
}

inline void get_double_list(const nlohmann::json& j, const std::string& key,
                            std::vector<double>& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    want(it->is_array() && !it->empty(), key, "a non-empty array of numbers");
    std::vector<double> parsed;
    for (const auto& v : *it) {
        want(v.is_number() && !v.is_boolean(), key, "a non-empty array of numbers");
        parsed.push_back(v.get<double>());
    }
    out = std::move(parsed);
}

} // namespace detail

/// Range and cross-field checks, run before any data is synthesized so a bad
/// file fails in milliseconds. Every message names the offending key.
inline void validate_experiment_config(const ExperimentConfig& cfg) {
    using detail::want;
    const PipelineConfig& p = cfg.pipe;
    want(p.dim >= 2, "dim", ">= 2");
    want(p.classes >= 2, "classes", ">= 2");
    want(p.noise_std >= 0.0, "noise_std", ">= 0");
    want(p.shift >= 0.0 && p.shift <= 1.0, "shift", "in [0, 1]");
    want(p.tau > 0.0, "tau", "> 0");
    want(p.trigger_overlap >= 0.0 && p.trigger_overlap < 1.0, "trigger_overlap", "in [0, 1)");
    // A target label outside the label set would make every attack-rate
    // denominator empty and the margin analysis vacuous.
    want(p.target_label >= 0 && p.target_label < p.classes, "target_label",
         "a valid class index (0 <= target_label < classes)");
    want(p.n_train >= 1, "n_train", ">= 1");
    want(p.n_test >= 1, "n_test", ">= 1");
    want(p.n_proxy_train >= 1, "n_proxy_train", ">= 1");
    want(p.n_proxy_test >= 1, "n_proxy_test", ">= 1");
    want(p.n_poison >= 0, "n_poison", ">= 0");
    want(p.n_target_class_extra >= 0, "n_target_class_extra", ">= 0");
    want(p.target_class_extra_noise > 0.0, "target_class_extra_noise", "> 0");
    want(p.n_tune_target_extra >= 0, "n_tune_target_extra", ">= 0");
    want(p.tune_target_extra_noise > 0.0, "tune_target_extra_noise", "> 0");
    want(p.arch.layers == 1 || p.arch.layers == 2, "layers", "1 or 2");
    if (p.arch.layers == 2) want(p.arch.hidden >= 2, "hidden", ">= 2 for a 2-layer stack");
    want(p.arch.rank >= 1, "rank", ">= 1");
    want(p.arch.alpha > 0.0, "alpha", "> 0");
    want(p.pretrain.lr > 0.0, "pretrain_lr", "> 0");
    want(p.pretrain.epochs >= 1, "pretrain_epochs", ">= 1");
    want(p.pretrain.min_epochs >= 0, "pretrain_min_epochs", ">= 0");
    want(p.pretrain.min_epochs <= p.pretrain.epochs, "pretrain_min_epochs", "<= pretrain_epochs");
    want(p.pretrain.clean_warmup_epochs >= 0, "pretrain_clean_warmup_epochs", ">= 0");
    want(p.pretrain.clean_warmup_epochs < p.pretrain.epochs, "pretrain_clean_warmup_epochs",
         "< pretrain_epochs");
    want(p.pretrain.stop_check_steps >= 0, "pretrain_stop_check_steps", ">= 0");
    want(p.pretrain.batch_size >= 1, "pretrain_batch_size", ">= 1");
    want(p.pretrain.weight_decay >= 0.0, "pretrain_weight_decay", ">= 0");
    want(p.pretrain.warmup_frac >= 0.0 && p.pretrain.warmup_frac <= 1.0, "pretrain_warmup_frac",
         "in [0, 1]");
    want(p.asr_target > 0.0 && p.asr_target <= 1.0, "asr_target", "in (0, 1]");
    want(p.pretrain_ca_floor >= 0.0 && p.pretrain_ca_floor <= 1.0, "pretrain_ca_floor",
         "in [0, 1]");
    want(p.tune.lr > 0.0, "tune_lr", "> 0");
    want(p.tune.epochs >= 1, "tune_epochs", ">= 1");
    want(p.tune.batch_size >= 1, "tune_batch_size", ">= 1");
    want(p.tune.weight_decay >= 0.0, "tune_weight_decay", ">= 0");
    want(p.tune.warmup_frac >= 0.0 && p.tune.warmup_frac <= 1.0, "tune_warmup_frac", "in [0, 1]");
    want(p.loss.lambda >= 0.0, "lambda", ">= 0");
    want(p.loss.dropout_p >= 0.0 && p.loss.dropout_p < 1.0, "dropout_p", "in [0, 1)");
    want(p.loss.subspace_k >= 1, "subspace_k", ">= 1");
    if ((p.loss.cl || p.loss.tr || p.loss.pt) && p.method != Method::rora) {
        throw ConfigError("config: toggles only apply to method rora (got method '" +
                          method_name(p.method) + "')");
    }
    want(!cfg.seeds.empty(), "seeds", "a non-empty array");
    want(cfg.axis == "s" || cfg.axis == "lambda" || cfg.axis == "p" || cfg.axis == "r" ||
             cfg.axis == "alpha",
         "axis", "one of s | lambda | p | r | alpha");
    want(!cfg.values.empty(), "values", "a non-empty array");
    for (double v : cfg.values) {
        if (cfg.axis == "p") {
            want(v >= 0.0 && v < 1.0, "values", "probabilities in [0, 1) on the p axis");
        } else if (cfg.axis == "lambda") {
            want(v >= 0.0, "values", ">= 0 on the lambda axis");
        } else {
            want(v > 0.0, "values", "> 0");
        }
        if (cfg.axis == "r") {
            want(v == static_cast<double>(static_cast<int>(v)) && v >= 1.0, "values",
                 "positive integers on the r axis");
        }
    }
    want(!cfg.out_dir.empty(), "out_dir", "a non-empty path");
}

/// Parses one flat JSON object. Missing keys keep their defaults; unknown keys
/// are an error; every value is type- and range-checked.
inline ExperimentConfig parse_experiment_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a single JSON object");

    static const std::set<std::string> known = {
        "alpha", "asr_target", "axis", "classes", "clean_label", "config_version", "dim",
        "dropout_p", "hidden", "lambda", "layers", "method", "n_poison", "n_proxy_test",
        "n_proxy_train", "n_target_class_extra", "n_test", "n_train", "n_tune_target_extra",
        "noise_std", "out_dir", "pretrain_batch_size", "pretrain_ca_floor",
        "pretrain_clean_warmup_epochs", "pretrain_epochs", "pretrain_lr", "pretrain_min_epochs",
        "pretrain_stop_check_steps", "pretrain_warmup_frac", "pretrain_weight_decay", "rank",
        "rescale_layers", "seed", "seeds", "shift", "subspace_k", "target_class_extra_noise",
        "target_label", "tau", "toggles", "trigger_overlap", "tune_batch_size", "tune_epochs",
        "tune_lr", "tune_target_extra_noise", "tune_warmup_frac", "tune_weight_decay", "values",
    };
    for (const auto& item : j.items()) {
        if (!known.count(item.key())) {
            throw ConfigError("config: unknown key '" + item.key() + "'");
        }
    }

    ExperimentConfig cfg;
    int version = 1;
    detail::get_int(j, "config_version", version);
    if (version != 1) {
        throw ConfigError("config: config_version " + std::to_string(version) +
                          " not supported (this reader handles version 1)");
    }

    PipelineConfig& p = cfg.pipe;
    detail::get_int(j, "dim", p.dim);
    detail::get_int(j, "classes", p.classes);
    detail::get_double(j, "noise_std", p.noise_std);
    detail::get_double(j, "shift", p.shift);
    detail::get_double(j, "tau", p.tau);
    detail::get_double(j, "trigger_overlap", p.trigger_overlap);
    detail::get_int(j, "target_label", p.target_label);
    detail::get_int(j, "n_train", p.n_train);
    detail::get_int(j, "n_test", p.n_test);
    detail::get_int(j, "n_proxy_train", p.n_proxy_train);
    detail::get_int(j, "n_proxy_test", p.n_proxy_test);
    detail::get_int(j, "n_poison", p.n_poison);
    detail::get_int(j, "n_target_class_extra", p.n_target_class_extra);
    detail::get_double(j, "target_class_extra_noise", p.target_class_extra_noise);
    detail::get_int(j, "n_tune_target_extra", p.n_tune_target_extra);
    detail::get_double(j, "tune_target_extra_noise", p.tune_target_extra_noise);
    detail::get_bool(j, "clean_label", p.clean_label);
    detail::get_int(j, "layers", p.arch.layers);
    detail::get_int(j, "hidden", p.arch.hidden);
    detail::get_int(j, "rank", p.arch.rank);
    detail::get_double(j, "alpha", p.arch.alpha);
    detail::get_double(j, "pretrain_lr", p.pretrain.lr);
    detail::get_int(j, "pretrain_epochs", p.pretrain.epochs);
    detail::get_int(j, "pretrain_min_epochs", p.pretrain.min_epochs);
    detail::get_int(j, "pretrain_clean_warmup_epochs", p.pretrain.clean_warmup_epochs);
    detail::get_int(j, "pretrain_stop_check_steps", p.pretrain.stop_check_steps);
    detail::get_int(j, "pretrain_batch_size", p.pretrain.batch_size);
    detail::get_double(j, "pretrain_weight_decay", p.pretrain.weight_decay);
    detail::get_double(j, "pretrain_warmup_frac", p.pretrain.warmup_frac);
    detail::get_double(j, "asr_target", p.asr_target);
    detail::get_double(j, "pretrain_ca_floor", p.pretrain_ca_floor);
    detail::get_double(j, "tune_lr", p.tune.lr);
    detail::get_int(j, "tune_epochs", p.tune.epochs);
    detail::get_int(j, "tune_batch_size", p.tune.batch_size);
    detail::get_double(j, "tune_weight_decay", p.tune.weight_decay);
    detail::get_double(j, "tune_warmup_frac", p.tune.warmup_frac);

    std::string method = method_name(p.method);
    detail::get_string(j, "method", method);
    p.method = parse_method(method);
    std::string toggles = toggles_text(p.loss);
    detail::get_string(j, "toggles", toggles);
    parse_toggles(toggles, p.loss);
    detail::get_double(j, "lambda", p.loss.lambda);
    detail::get_double(j, "dropout_p", p.loss.dropout_p);
    detail::get_int(j, "subspace_k", p.loss.subspace_k);
    std::string layers_sel = p.rescale_layers.to_string();
    detail::get_string(j, "rescale_layers", layers_sel);
    p.rescale_layers = LayerSelector::parse(layers_sel);
    detail::get_seed(j, "seed", p.seed);

    detail::get_seed_list(j, "seeds", cfg.seeds);
    detail::get_string(j, "axis", cfg.axis);
    detail::get_double_list(j, "values", cfg.values);
    detail::get_string(j, "out_dir", cfg.out_dir);

    validate_experiment_config(cfg);
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

/// The run's configuration with every default spelled out, as deterministic
/// JSON (sorted keys, two-space indent). Written next to each run's outputs
/// and embedded in checkpoints, so any artifact can be reproduced from itself.
inline std::string resolved_config_json(const ExperimentConfig& cfg) {
    const PipelineConfig& p = cfg.pipe;
    nlohmann::json j;
    j["config_version"] = 1;
    j["dim"] = p.dim;
    j["classes"] = p.classes;
    j["noise_std"] = p.noise_std;
    j["shift"] = p.shift;
    j["tau"] = p.tau;
    j["trigger_overlap"] = p.trigger_overlap;
    j["target_label"] = p.target_label;
    j["n_train"] = p.n_train;
    j["n_test"] = p.n_test;
    j["n_proxy_train"] = p.n_proxy_train;
    j["n_proxy_test"] = p.n_proxy_test;
    j["n_poison"] = p.n_poison;
    j["n_target_class_extra"] = p.n_target_class_extra;
    j["target_class_extra_noise"] = p.target_class_extra_noise;
    j["n_tune_target_extra"] = p.n_tune_target_extra;
    j["tune_target_extra_noise"] = p.tune_target_extra_noise;
    j["clean_label"] = p.clean_label;
    j["layers"] = p.arch.layers;
    j["hidden"] = p.arch.hidden;
    j["rank"] = p.arch.rank;
    j["alpha"] = p.arch.alpha;
    j["pretrain_lr"] = p.pretrain.lr;
    j["pretrain_epochs"] = p.pretrain.epochs;
    j["pretrain_min_epochs"] = p.pretrain.min_epochs;
    j["pretrain_clean_warmup_epochs"] = p.pretrain.clean_warmup_epochs;
    j["pretrain_stop_check_steps"] = p.pretrain.stop_check_steps;
    j["pretrain_batch_size"] = p.pretrain.batch_size;
    j["pretrain_weight_decay"] = p.pretrain.weight_decay;
    j["pretrain_warmup_frac"] = p.pretrain.warmup_frac;
    j["asr_target"] = p.asr_target;
    j["pretrain_ca_floor"] = p.pretrain_ca_floor;
    j["tune_lr"] = p.tune.lr;
    j["tune_epochs"] = p.tune.epochs;
    j["tune_batch_size"] = p.tune.batch_size;
    j["tune_weight_decay"] = p.tune.weight_decay;
    j["tune_warmup_frac"] = p.tune.warmup_frac;
    j["method"] = method_name(p.method);
    j["toggles"] = toggles_text(p.loss);
    j["lambda"] = p.loss.lambda;
    j["dropout_p"] = p.loss.dropout_p;
    j["subspace_k"] = p.loss.subspace_k;
    j["rescale_layers"] = p.rescale_layers.to_string();
    j["seed"] = p.seed;
    j["seeds"] = cfg.seeds;
    j["axis"] = cfg.axis;
    j["values"] = cfg.values;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2) + "\n";
}

} // namespace sll
