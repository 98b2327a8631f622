#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ccp/common.hpp"
#include "ccp/engine.hpp"
#include "ccp/scenarios.hpp"

namespace ccp {

// Experiment configuration, stored as `key = value` lines. Keys mirror the
// hyperparameter names of the run configuration; unknown keys are rejected
// outright so typos cannot silently fall back to defaults.
struct ExperimentConfig {
    // data
    std::string dataset; // path to a dataset file; empty = synthesize
    std::string scenario = "base";
    int severity = 1;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::size_t num_classes = 4;
    std::size_t feature_dim = 16;
    std::size_t labeled_per_class = 40;
    std::size_t unlabeled_per_class = 460;
    std::size_t test_per_class = 200;
    std::size_t ood_clusters = 6;
    std::size_t ood_cluster_size = 500;
    double class_separation = 3.5;
    double noise_sigma = 1.0;

    // network
    std::vector<std::size_t> hidden_layers = {64, 64, 32};
    std::size_t embed_dim = 16;
    std::string activation = "relu";
    double weight_decay = 0.0005;

    // optimizer
    double learning_rate = 0.06;
    double first_iteration_learning_rate = 0.0006;
    double momentum = 0.9;
    bool nesterov = true;

    // CCP iterations
    std::size_t batch_size = 64;
    std::size_t class_guarantee = 4;
    std::size_t max_epochs_per_iteration = 40;
    std::size_t first_iteration_epochs = 50;
    std::size_t max_iterations = 12;
    std::size_t min_iterations = 3;
    double ema_loss_decay = 0.99;
    std::size_t early_stop_patience = 5;
    double temperature = 0.1;
    std::string trusted_labels = "auto"; // auto | true | false
    bool pretrain = true;
    std::size_t warmup_epochs = 30;
    bool subsampling = true;
    double initial_d_max = 0.01;
    double mass_plateau_tolerance = 0.005;
    bool single_iteration = false;
    bool reset_before_classifier = true;

    // classifier phase
    std::size_t classifier_epochs = 200;
    std::size_t classifier_batch_size = 64;
    bool classifier_joint_loss = true;
    double ema_model_decay = 0.999;

    // input transforms drawn per batch
    std::vector<std::string> transforms = {"gaussian-noise", "feature-hide", "scale-jitter"};

    // output
    std::size_t trace_samples = 0;
    std::string out = "runs";

    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw InputError("bad number: " + s);
    return v;
}

inline long long parse_int(const std::string& s) {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw InputError("bad integer: " + s);
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw InputError("bad boolean (want true/false): " + s);
}

template <typename T>
inline std::string join_list(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(xs[i]);
    }
    return out;
}

template <typename T>
inline std::vector<T> split_list(const std::string& s) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(static_cast<T>(parse_int(cell)));
    if (out.empty()) throw InputError("empty list value");
    return out;
}

struct ConfigField {
    std::string name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
    auto str = [](std::string ExperimentConfig::*m, const char* name) {
        return ConfigField{name, [m](const ExperimentConfig& c) { return c.*m; },
                           [m](ExperimentConfig& c, const std::string& v) { c.*m = v; }};
    };
    auto num = [](double ExperimentConfig::*m, const char* name) {
        return ConfigField{name, [m](const ExperimentConfig& c) { return format_double(c.*m); },
                           [m](ExperimentConfig& c, const std::string& v) { c.*m = parse_double(v); }};
    };
    auto size = [](std::size_t ExperimentConfig::*m, const char* name) {
        return ConfigField{name, [m](const ExperimentConfig& c) { return std::to_string(c.*m); },
                           [m](ExperimentConfig& c, const std::string& v) {
                               long long x = parse_int(v);
                               if (x < 0) throw InputError(std::string("negative value for ") + v);
                               c.*m = static_cast<std::size_t>(x);
                           }};
    };
    auto boolean = [](bool ExperimentConfig::*m, const char* name) {
        return ConfigField{name,
                           [m](const ExperimentConfig& c) { return (c.*m) ? "true" : "false"; },
                           [m](ExperimentConfig& c, const std::string& v) { c.*m = parse_bool(v); }};
    };

    static const std::vector<ConfigField> fields = {
        str(&ExperimentConfig::dataset, "dataset"),
        str(&ExperimentConfig::scenario, "scenario"),
        ConfigField{"severity",
                    [](const ExperimentConfig& c) { return std::to_string(c.severity); },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.severity = static_cast<int>(parse_int(v));
                    }},
        ConfigField{"seed",
                    [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.seed = static_cast<std::uint64_t>(parse_int(v));
                    }},
        ConfigField{"seeds",
                    [](const ExperimentConfig& c) { return join_list(c.seeds); },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.seeds = split_list<std::uint64_t>(v);
                    }},
        size(&ExperimentConfig::num_classes, "num_classes"),
        size(&ExperimentConfig::feature_dim, "feature_dim"),
        size(&ExperimentConfig::labeled_per_class, "labeled_per_class"),
        size(&ExperimentConfig::unlabeled_per_class, "unlabeled_per_class"),
        size(&ExperimentConfig::test_per_class, "test_per_class"),
        size(&ExperimentConfig::ood_clusters, "ood_clusters"),
        size(&ExperimentConfig::ood_cluster_size, "ood_cluster_size"),
        num(&ExperimentConfig::class_separation, "class_separation"),
        num(&ExperimentConfig::noise_sigma, "noise_sigma"),
        ConfigField{"hidden_layers",
                    [](const ExperimentConfig& c) { return join_list(c.hidden_layers); },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.hidden_layers = split_list<std::size_t>(v);
                    }},
        size(&ExperimentConfig::embed_dim, "embed_dim"),
        str(&ExperimentConfig::activation, "activation"),
        num(&ExperimentConfig::weight_decay, "weight_decay"),
        num(&ExperimentConfig::learning_rate, "learning_rate"),
        num(&ExperimentConfig::first_iteration_learning_rate, "first_iteration_learning_rate"),
        num(&ExperimentConfig::momentum, "momentum"),
        boolean(&ExperimentConfig::nesterov, "nesterov"),
        size(&ExperimentConfig::batch_size, "batch_size"),
        size(&ExperimentConfig::class_guarantee, "class_guarantee"),
        size(&ExperimentConfig::max_epochs_per_iteration, "max_epochs_per_iteration"),
        size(&ExperimentConfig::first_iteration_epochs, "first_iteration_epochs"),
        size(&ExperimentConfig::max_iterations, "max_iterations"),
        size(&ExperimentConfig::min_iterations, "min_iterations"),
        num(&ExperimentConfig::ema_loss_decay, "ema_loss_decay"),
        size(&ExperimentConfig::early_stop_patience, "early_stop_patience"),
        num(&ExperimentConfig::temperature, "temperature"),
        str(&ExperimentConfig::trusted_labels, "trusted_labels"),
        boolean(&ExperimentConfig::pretrain, "pretrain"),
        size(&ExperimentConfig::warmup_epochs, "warmup_epochs"),
        boolean(&ExperimentConfig::subsampling, "subsampling"),
        num(&ExperimentConfig::initial_d_max, "initial_d_max"),
        num(&ExperimentConfig::mass_plateau_tolerance, "mass_plateau_tolerance"),
        boolean(&ExperimentConfig::single_iteration, "single_iteration"),
        boolean(&ExperimentConfig::reset_before_classifier, "reset_before_classifier"),
        size(&ExperimentConfig::classifier_epochs, "classifier_epochs"),
        size(&ExperimentConfig::classifier_batch_size, "classifier_batch_size"),
        boolean(&ExperimentConfig::classifier_joint_loss, "classifier_joint_loss"),
        num(&ExperimentConfig::ema_model_decay, "ema_model_decay"),
        ConfigField{"transforms",
                    [](const ExperimentConfig& c) {
                        std::string out;
                        for (std::size_t i = 0; i < c.transforms.size(); ++i) {
                            if (i) out += ",";
                            out += c.transforms[i];
                        }
                        return out;
                    },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.transforms.clear();
                        std::stringstream ss(v);
                        std::string cell;
                        while (std::getline(ss, cell, ',')) c.transforms.push_back(cell);
                        if (c.transforms.empty()) throw InputError("empty transform list");
                    }},
        size(&ExperimentConfig::trace_samples, "trace_samples"),
        str(&ExperimentConfig::out, "out"),
    };
    return fields;
}

} // namespace detail

inline void validate_config(const ExperimentConfig& cfg, const std::string& origin);

inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& field : detail::config_fields())
        out += field.name + " = " + field.get(cfg) + "\n";
    return out;
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        std::string stripped = strip(line);
        if (stripped.empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw InputError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = strip(stripped.substr(0, eq));
        std::string value = strip(stripped.substr(eq + 1));

        bool known = false;
        for (const auto& field : detail::config_fields()) {
            if (field.name != key) continue;
            try {
                field.set(cfg, value);
            } catch (const InputError& e) {
                throw InputError(origin + ":" + std::to_string(line_no) + ": " + e.what());
            } catch (const std::exception& e) {
                throw InputError(origin + ":" + std::to_string(line_no) + ": bad value for " + key);
            }
            known = true;
            break;
        }
        if (!known)
            throw InputError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    validate_config(cfg, origin);
    return cfg;
}

inline void validate_config(const ExperimentConfig& cfg, const std::string& origin) {
    if (cfg.seeds.empty()) throw InputError(origin + ": seeds must not be empty");
    if (cfg.learning_rate <= 0.0 || cfg.first_iteration_learning_rate <= 0.0)
        throw InputError(origin + ": learning rates must be positive");
    if (cfg.ema_loss_decay <= 0.0 || cfg.ema_loss_decay >= 1.0)
        throw InputError(origin + ": ema_loss_decay must be in (0, 1)");
    if (cfg.ema_model_decay <= 0.0 || cfg.ema_model_decay >= 1.0)
        throw InputError(origin + ": ema_model_decay must be in (0, 1)");
    if (cfg.temperature <= 0.0) throw InputError(origin + ": temperature must be positive");
    if (cfg.class_guarantee == 0) throw InputError(origin + ": class_guarantee must be at least 1");
    if (cfg.scenario != "base") scenario_from_name(cfg.scenario);
    if (cfg.scenario != "base" && (cfg.severity < 1 || cfg.severity > 3))
        throw InputError(origin + ": severity must be 1, 2, or 3");
    if (cfg.trusted_labels != "auto" && cfg.trusted_labels != "true" && cfg.trusted_labels != "false")
        throw InputError(origin + ": trusted_labels must be auto, true, or false");
    activation_from_name(cfg.activation);
    for (const auto& t : cfg.transforms) transform_kind_from_name(t);
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open config: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str(), path);
}

inline ScenarioSpec to_scenario_spec(const ExperimentConfig& cfg, std::uint64_t seed) {
    ScenarioSpec spec;
    spec.scenario = scenario_from_name(cfg.scenario);
    spec.severity = cfg.severity;
    spec.seed = seed;
    spec.num_classes = cfg.num_classes;
    spec.feature_dim = cfg.feature_dim;
    spec.labeled_per_class = cfg.labeled_per_class;
    spec.unlabeled_per_class = cfg.unlabeled_per_class;
    spec.test_per_class = cfg.test_per_class;
    spec.ood_clusters = cfg.ood_clusters;
    spec.ood_cluster_size = cfg.ood_cluster_size;
    spec.class_separation = cfg.class_separation;
    spec.noise_sigma = cfg.noise_sigma;
    return spec;
}

inline RunConfig to_run_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    RunConfig run;
    run.hidden_layers = cfg.hidden_layers;
    run.embed_dim = cfg.embed_dim;
    run.activation = activation_from_name(cfg.activation);
    run.weight_decay = cfg.weight_decay;
    run.learning_rate = cfg.learning_rate;
    run.first_iteration_learning_rate = cfg.first_iteration_learning_rate;
    run.momentum = cfg.momentum;
    run.nesterov = cfg.nesterov;
    run.batch_size = cfg.batch_size;
    run.class_guarantee = cfg.class_guarantee;
    run.max_epochs_per_iteration = cfg.max_epochs_per_iteration;
    run.first_iteration_epochs = cfg.first_iteration_epochs;
    run.max_iterations = cfg.max_iterations;
    run.min_iterations = cfg.min_iterations;
    run.ema_loss_decay = cfg.ema_loss_decay;
    run.early_stop_patience = cfg.early_stop_patience;
    run.temperature = cfg.temperature;
    // Given labels stop being trusted in the noisy-label scenario: every
    // operation applied to unlabeled data then applies to all data.
    if (cfg.trusted_labels == "auto")
        run.trusted_labels = cfg.scenario != scenario_name(Scenario::noisy_label);
    else
        run.trusted_labels = cfg.trusted_labels == "true";
    run.pretrain = cfg.pretrain;
    run.warmup_epochs = cfg.warmup_epochs;
    run.subsampling = cfg.subsampling;
    run.initial_d_max = cfg.initial_d_max;
    run.mass_plateau_tolerance = cfg.mass_plateau_tolerance;
    run.single_iteration = cfg.single_iteration;
    run.reset_before_classifier = cfg.reset_before_classifier;
    run.classifier_epochs = cfg.classifier_epochs;
    run.classifier_batch_size = cfg.classifier_batch_size;
    run.classifier_joint_loss = cfg.classifier_joint_loss;
    run.ema_model_decay = cfg.ema_model_decay;
    run.transforms.clear();
    for (const auto& t : cfg.transforms)
        run.transforms.push_back(make_transform(transform_kind_from_name(t)));
    run.seed = seed;
    run.trace_samples = cfg.trace_samples;
    return run;
}

} // namespace ccp
