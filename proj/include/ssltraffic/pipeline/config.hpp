#pragma once

// Pipeline configuration: one JSON document with nine sections. Defaults are
// the evaluation hyperparameters; a user file and `section.key` overrides are
// merged on top, and unknown keys are rejected.

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssltraffic/cl/confident_learning.hpp"
#include "ssltraffic/errors.hpp"
#include "ssltraffic/final_trainer.hpp"
#include "ssltraffic/flow/aggregate.hpp"
#include "ssltraffic/flow/features.hpp"
#include "ssltraffic/ssl/autoencoder.hpp"
#include "ssltraffic/ssl/tabcl.hpp"

namespace ssltraffic::pipeline {

using nlohmann::json;

inline constexpr const char* kConfigEnv = "SSLTRAFFIC_CONFIG";

struct FeaturesSection {
    std::vector<std::string> columns = flow::default_feature_columns();
    flow::AggregateOptions aggregate;
};

/// One named identity: a = b / max(c + offset, floor), a = b + c or a = b * c.
struct ConstraintRule {
    std::string kind = "ratio";
    std::string a, b, c;
    double phi = 1.0;
    double offset = 0.0;
    double floor = 0.0;
};

struct ConstraintsSection {
    double phi = 1.0;
    double delta = ConstraintSet::kDefaultDelta;
    /// Unset: the built-in flow identities whose features are in the schema.
    std::optional<std::vector<ConstraintRule>> rules;
};

struct FusionSection {
    /// "both" fuses the two branches; "ae" or "tabcl" uses one branch alone.
    std::string branches = "both";
};

struct FinalSection {
    SceConfig sce;
    /// "cl" trains on confident-learning weights, "none" on uniform weights.
    std::string weights = "cl";
};

struct EvalSection {
    double test_fraction = 0.2;
    bool gnuplot = true;
};

struct SynthSection {
    /// "flow" (21 flow features with built-in identities) or "gaussian".
    std::string kind = "flow";
    std::size_t classes = 10;
    std::size_t samples = 5000;
    double separation = 1.0;
    std::size_t dims = 8;  // gaussian only
    /// "paper", "uniform" or an explicit list.
    json priors = "paper";
    double labeled_fraction = 0.1;
    double noise_rate = 0.0;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::string output_dir = "ssltraffic_out";
    std::vector<std::string> inputs;  // pcap files for extract; empty means synth
    FeaturesSection features;
    ConstraintsSection constraints;
    ssl::AeConfig ae;
    ssl::TabclConfig tabcl;
    FusionSection fusion;
    cl::ClConfig cl;
    FinalSection final;
    EvalSection eval;
    SynthSection synth;

    void validate() const {
        ae.validate();
        tabcl.validate();
        cl.validate();
        final.sce.validate();
        if (features.columns.empty()) throw ConfigError("features.columns must not be empty");
        if (fusion.branches != "both" && fusion.branches != "ae" && fusion.branches != "tabcl")
            throw ConfigError("fusion.branches must be 'both', 'ae' or 'tabcl'");
        if (final.weights != "cl" && final.weights != "none")
            throw ConfigError("final.weights must be 'cl' or 'none'");
        if (!(eval.test_fraction >= 0.0 && eval.test_fraction < 1.0))
            throw ConfigError("eval.test_fraction must be in [0, 1)");
        if (synth.kind != "flow" && synth.kind != "gaussian") throw ConfigError("synth.kind must be 'flow' or 'gaussian'");
        if (synth.classes < 2) throw ConfigError("synth.classes must be >= 2");
        if (!(synth.labeled_fraction > 0.0 && synth.labeled_fraction < 1.0))
            throw ConfigError("synth.labeled_fraction must be in (0, 1)");
        if (!(synth.noise_rate >= 0.0 && synth.noise_rate < 1.0)) throw ConfigError("synth.noise_rate must be in [0, 1)");
        if (threads == 0) throw ConfigError("threads must be >= 1");
    }
};

inline json to_json(const PipelineConfig& c) {
    json rules = nullptr;
    if (c.constraints.rules) {
        rules = json::array();
        for (const auto& r : *c.constraints.rules)
            rules.push_back({{"kind", r.kind}, {"a", r.a}, {"b", r.b}, {"c", r.c}, {"phi", r.phi},
                             {"offset", r.offset}, {"floor", r.floor}});
    }
    const auto& a = c.ae;
    const auto& t = c.tabcl;
    const auto& l = c.cl;
    const auto& f = c.final.sce;
    return {
        {"seed", c.seed},
        {"threads", c.threads},
        {"output_dir", c.output_dir},
        {"inputs", c.inputs},
        {"features",
         {{"columns", c.features.columns},
          {"idle_timeout", c.features.aggregate.idle_timeout},
          {"active_timeout", c.features.aggregate.active_timeout},
          {"burst_gap", c.features.aggregate.burst_gap}}},
        {"constraints", {{"phi", c.constraints.phi}, {"delta", c.constraints.delta}, {"rules", rules}}},
        {"ae",
         {{"hidden", a.hidden},
          {"latent", a.latent},
          {"head_hidden", a.head_hidden},
          {"dropout", a.dropout},
          {"learning_rate", a.learning_rate},
          {"weight_decay", a.weight_decay},
          {"batch_size", a.batch_size},
          {"pretrain_epochs", a.pretrain_epochs},
          {"finetune_epochs", a.finetune_epochs},
          {"frozen_epochs", a.frozen_epochs},
          {"phi", a.phi}}},
        {"tabcl",
         {{"hidden", t.hidden},
          {"latent", t.latent},
          {"projection_dim", t.projection_dim},
          {"head_hidden", t.head_hidden},
          {"dropout", t.dropout},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"r", t.replacement_rate},
          {"tau_cont", t.tau_cont},
          {"tau_cat", t.tau_cat},
          {"lambda", t.lambda},
          {"refresh_interval", t.refresh_interval},
          {"refresh_tolerance", t.refresh_tolerance},
          {"max_refresh_rounds", t.max_refresh_rounds},
          {"probe_epochs", t.probe_epochs},
          {"probe_learning_rate", t.probe_learning_rate},
          {"probe_batch_size", t.probe_batch_size},
          {"finetune_epochs", t.finetune_epochs},
          {"frozen_epochs", t.frozen_epochs}}},
        {"fusion", {{"branches", c.fusion.branches}}},
        {"cl",
         {{"folds", l.folds},
          {"q", l.q},
          {"w_min", l.w_min},
          {"gamma", l.gamma},
          {"eps_sigma", l.eps_sigma},
          {"eps_mass", l.eps_mass},
          {"quantile", l.quantile == cl::QuantileMethod::linear ? "linear" : "nearest_rank"},
          {"base", l.base},
          {"hidden", l.hidden},
          {"dropout", l.dropout},
          {"learning_rate", l.learning_rate},
          {"batch_size", l.batch_size},
          {"epochs", l.epochs}}},
        {"final",
         {{"alpha", f.alpha},
          {"beta", f.beta},
          {"smoothing", f.smoothing},
          {"hidden", f.hidden},
          {"dropout", f.dropout},
          {"learning_rate", f.learning_rate},
          {"weight_decay", f.weight_decay},
          {"batch_size", f.batch_size},
          {"epochs", f.epochs},
          {"include_labeled", f.include_labeled},
          {"weights", c.final.weights}}},
        {"eval", {{"test_fraction", c.eval.test_fraction}, {"gnuplot", c.eval.gnuplot}}},
        {"synth",
         {{"kind", c.synth.kind},
          {"classes", c.synth.classes},
          {"samples", c.synth.samples},
          {"separation", c.synth.separation},
          {"dims", c.synth.dims},
          {"priors", c.synth.priors},
          {"labeled_fraction", c.synth.labeled_fraction},
          {"noise_rate", c.synth.noise_rate}}},
    };
}

namespace detail {

template <class T>
void read(const json& j, const char* section, const char* key, T& out) {
    try {
        j.at(section).at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
}

/// Overlays `patch` onto `base`, rejecting keys `base` does not have. Keys
/// whose default is null accept any value.
inline void merge_strict(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("config" + (path.empty() ? "" : " section '" + path + "'") + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
        json& slot = base[key];
        if (slot.is_object() && value.is_object()) merge_strict(slot, value, where);
        else if (slot.is_object()) throw ConfigError("config key '" + where + "' must be an object");
        else slot = value;
    }
}

}  // namespace detail

inline PipelineConfig from_json(const json& j) {
    using detail::read;
    PipelineConfig c;
    try {
        j.at("seed").get_to(c.seed);
        j.at("threads").get_to(c.threads);
        j.at("output_dir").get_to(c.output_dir);
        j.at("inputs").get_to(c.inputs);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    read(j, "features", "columns", c.features.columns);
    read(j, "features", "idle_timeout", c.features.aggregate.idle_timeout);
    read(j, "features", "active_timeout", c.features.aggregate.active_timeout);
    read(j, "features", "burst_gap", c.features.aggregate.burst_gap);

    read(j, "constraints", "phi", c.constraints.phi);
    read(j, "constraints", "delta", c.constraints.delta);
    const json& rules = j.at("constraints").at("rules");
    if (!rules.is_null()) {
        if (!rules.is_array()) throw ConfigError("constraints.rules must be an array or null");
        std::vector<ConstraintRule> out;
        for (const auto& r : rules) {
            ConstraintRule cr;
            cr.phi = c.constraints.phi;
            try {
                for (const auto& [k, v] : r.items()) {
                    if (k == "kind") v.get_to(cr.kind);
                    else if (k == "a") v.get_to(cr.a);
                    else if (k == "b") v.get_to(cr.b);
                    else if (k == "c") v.get_to(cr.c);
                    else if (k == "phi") v.get_to(cr.phi);
                    else if (k == "offset") v.get_to(cr.offset);
                    else if (k == "floor") v.get_to(cr.floor);
                    else throw ConfigError("constraints.rules: unknown key '" + k + "'");
                }
            } catch (const json::exception& e) {
                throw ConfigError(std::string("constraints.rules: ") + e.what());
            }
            constraint_kind_from_string(cr.kind);
            out.push_back(cr);
        }
        c.constraints.rules = std::move(out);
    }

    auto& a = c.ae;
    read(j, "ae", "hidden", a.hidden);
    read(j, "ae", "latent", a.latent);
    read(j, "ae", "head_hidden", a.head_hidden);
    read(j, "ae", "dropout", a.dropout);
    read(j, "ae", "learning_rate", a.learning_rate);
    read(j, "ae", "weight_decay", a.weight_decay);
    read(j, "ae", "batch_size", a.batch_size);
    read(j, "ae", "pretrain_epochs", a.pretrain_epochs);
    read(j, "ae", "finetune_epochs", a.finetune_epochs);
    read(j, "ae", "frozen_epochs", a.frozen_epochs);
    read(j, "ae", "phi", a.phi);

    auto& t = c.tabcl;
    read(j, "tabcl", "hidden", t.hidden);
    read(j, "tabcl", "latent", t.latent);
    read(j, "tabcl", "projection_dim", t.projection_dim);
    read(j, "tabcl", "head_hidden", t.head_hidden);
    read(j, "tabcl", "dropout", t.dropout);
    read(j, "tabcl", "learning_rate", t.learning_rate);
    read(j, "tabcl", "weight_decay", t.weight_decay);
    read(j, "tabcl", "batch_size", t.batch_size);
    read(j, "tabcl", "epochs", t.epochs);
    read(j, "tabcl", "r", t.replacement_rate);
    read(j, "tabcl", "tau_cont", t.tau_cont);
    read(j, "tabcl", "tau_cat", t.tau_cat);
    read(j, "tabcl", "lambda", t.lambda);
    read(j, "tabcl", "refresh_interval", t.refresh_interval);
    read(j, "tabcl", "refresh_tolerance", t.refresh_tolerance);
    read(j, "tabcl", "max_refresh_rounds", t.max_refresh_rounds);
    read(j, "tabcl", "probe_epochs", t.probe_epochs);
    read(j, "tabcl", "probe_learning_rate", t.probe_learning_rate);
    read(j, "tabcl", "probe_batch_size", t.probe_batch_size);
    read(j, "tabcl", "finetune_epochs", t.finetune_epochs);
    read(j, "tabcl", "frozen_epochs", t.frozen_epochs);

    read(j, "fusion", "branches", c.fusion.branches);

    auto& l = c.cl;
    std::string quantile;
    read(j, "cl", "folds", l.folds);
    read(j, "cl", "q", l.q);
    read(j, "cl", "w_min", l.w_min);
    read(j, "cl", "gamma", l.gamma);
    read(j, "cl", "eps_sigma", l.eps_sigma);
    read(j, "cl", "eps_mass", l.eps_mass);
    read(j, "cl", "quantile", quantile);
    read(j, "cl", "base", l.base);
    read(j, "cl", "hidden", l.hidden);
    read(j, "cl", "dropout", l.dropout);
    read(j, "cl", "learning_rate", l.learning_rate);
    read(j, "cl", "batch_size", l.batch_size);
    read(j, "cl", "epochs", l.epochs);
    if (quantile == "nearest_rank") l.quantile = cl::QuantileMethod::nearest_rank;
    else if (quantile == "linear") l.quantile = cl::QuantileMethod::linear;
    else throw ConfigError("cl.quantile must be 'nearest_rank' or 'linear'");

    auto& f = c.final.sce;
    read(j, "final", "alpha", f.alpha);
    read(j, "final", "beta", f.beta);
    read(j, "final", "smoothing", f.smoothing);
    read(j, "final", "hidden", f.hidden);
    read(j, "final", "dropout", f.dropout);
    read(j, "final", "learning_rate", f.learning_rate);
    read(j, "final", "weight_decay", f.weight_decay);
    read(j, "final", "batch_size", f.batch_size);
    read(j, "final", "epochs", f.epochs);
    read(j, "final", "include_labeled", f.include_labeled);
    read(j, "final", "weights", c.final.weights);

    read(j, "eval", "test_fraction", c.eval.test_fraction);
    read(j, "eval", "gnuplot", c.eval.gnuplot);

    read(j, "synth", "kind", c.synth.kind);
    read(j, "synth", "classes", c.synth.classes);
    read(j, "synth", "samples", c.synth.samples);
    read(j, "synth", "separation", c.synth.separation);
    read(j, "synth", "dims", c.synth.dims);
    c.synth.priors = j.at("synth").at("priors");
    read(j, "synth", "labeled_fraction", c.synth.labeled_fraction);
    read(j, "synth", "noise_rate", c.synth.noise_rate);

    // stage seeds follow the global seed
    a.seed = derive_seed(c.seed, 2);
    t.seed = derive_seed(c.seed, 3);
    l.seed = derive_seed(c.seed, 6);
    l.threads = c.threads;
    f.seed = derive_seed(c.seed, 7);
    c.validate();
    return c;
}

/// Sets `section.key` (any depth) from a command-line string. The value is
/// parsed as JSON when possible (numbers, booleans, arrays), else taken as a
/// plain string.
inline void apply_override(json& j, const std::string& path, const std::string& value) {
    json* slot = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!slot->is_object() || !slot->contains(key)) throw ConfigError("unknown config key '" + path + "'");
        slot = &(*slot)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (slot->is_object()) throw ConfigError("config key '" + path + "' names a section, not a value");
    json parsed = json::parse(value, nullptr, false);
    *slot = parsed.is_discarded() ? json(value) : parsed;
}

inline json read_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
    return j;
}

/// Defaults, then the file (explicit path, else $SSLTRAFFIC_CONFIG if set),
/// then overrides in order.
inline PipelineConfig load_config(const std::string& path,
                                  const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    json j = to_json(PipelineConfig{});
    std::string file = path;
    if (file.empty())
        if (const char* env = std::getenv(kConfigEnv); env && *env) file = env;
    if (!file.empty()) detail::merge_strict(j, read_config_file(file), "");
    for (const auto& [k, v] : overrides) apply_override(j, k, v);
    return from_json(j);
}

}  // namespace ssltraffic::pipeline
