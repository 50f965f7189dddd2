#pragma once
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nkd/kd_losses.hpp"
#include "nkd/nets.hpp"
#include "nkd/uskd.hpp"

// Experiment configuration: a JSON document with nested sections, every
// hyper-parameter a named key. CLI --set key.path=value overrides file values.

namespace nkd {

enum class Recipe { baseline, kd, nkd, dkd, uskd };

inline Recipe parse_recipe(const std::string& s) {
    if (s == "baseline") return Recipe::baseline;
    if (s == "kd") return Recipe::kd;
    if (s == "nkd") return Recipe::nkd;
    if (s == "dkd") return Recipe::dkd;
    if (s == "uskd") return Recipe::uskd;
    throw ConfigError("unknown recipe: " + s);
}

inline std::string recipe_name(Recipe r) {
    switch (r) {
    case Recipe::baseline: return "baseline";
    case Recipe::kd: return "kd";
    case Recipe::nkd: return "nkd";
    case Recipe::dkd: return "dkd";
    case Recipe::uskd: return "uskd";
    }
    return "?";
}

struct DatasetConfig {
    std::string format = "idx"; // idx | cifar
    std::string train_images, train_labels;
    std::string test_images, test_labels;
    int train_limit = 0; // 0 = use everything
    int test_limit = 0;
};

struct OptimConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<int> decay_epochs; // lr *= decay_factor entering these epochs
    double decay_factor = 0.1;
};

struct ExperimentConfig {
    Recipe recipe = Recipe::baseline;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int epochs = 1;
    int batch_size = 64;
    std::string outdir;
    DatasetConfig dataset;
    NetSpec student;
    std::string teacher_checkpoint;
    KdConfig kd;
    DkdConfig dkd;
    UskdConfig uskd;
    bool smooth_v_t = false; // label-smooth the scalar V_t fed to L_ori / Eq. 6
    OptimConfig optim;

    bool needs_teacher() const {
        if (recipe == Recipe::kd || recipe == Recipe::nkd || recipe == Recipe::dkd) return true;
        return recipe == Recipe::uskd && uskd.smooth_variant == SmoothVariant::teacher_passthrough;
    }

    void validate(bool for_run) const {
        if (!seed_set) throw ConfigError("config: seed is mandatory");
        if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        kd.validate();
        dkd.validate();
        uskd.validate();
        if (needs_teacher() && teacher_checkpoint.empty())
            throw ConfigError("config: recipe " + recipe_name(recipe) + " requires teacher_checkpoint");
        if (for_run) {
            if (outdir.empty()) throw ConfigError("config: outdir is mandatory for runs");
            if (dataset.train_images.empty() || dataset.train_labels.empty())
                throw ConfigError("config: training dataset paths are mandatory");
        }
    }
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    return it->get<T>();
}

inline NetSpec netspec_from_json(const nlohmann::json& j) {
    NetSpec spec;
    std::string kind = get_or<std::string>(j, "kind", "cnn2stage");
    if (kind == "mlp") spec.kind = NetSpec::Kind::mlp;
    else if (kind == "cnn2stage") spec.kind = NetSpec::Kind::cnn2stage;
    else throw ConfigError("config: unknown model kind " + kind);
    spec.stage_widths = get_or<std::vector<int>>(j, "stages", {4, 8});
    spec.num_classes = get_or<int>(j, "classes", 10);
    spec.tap_stage = get_or<int>(j, "tap_stage", 0);
    if (j.contains("in")) {
        auto in = j.at("in").get<std::vector<int>>();
        if (in.size() != 3) throw ConfigError("config: model \"in\" must be [channels, height, width]");
        spec.in_channels = in[0];
        spec.in_h = in[1];
        spec.in_w = in[2];
    } else {
        spec.in_channels = 0; // inferred from the dataset at run time
    }
    return spec;
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (!j.contains("recipe")) throw ConfigError("config: recipe is mandatory");
    cfg.recipe = parse_recipe(j.at("recipe").get<std::string>());
    if (j.contains("seed")) {
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.seed_set = true;
    }
    cfg.epochs = detail::get_or<int>(j, "epochs", 1);
    cfg.batch_size = detail::get_or<int>(j, "batch_size", 64);
    cfg.outdir = detail::get_or<std::string>(j, "outdir", "");
    cfg.teacher_checkpoint = detail::get_or<std::string>(j, "teacher_checkpoint", "");
    cfg.smooth_v_t = detail::get_or<bool>(j, "smooth_v_t", false);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        cfg.dataset.format = detail::get_or<std::string>(d, "format", "idx");
        if (cfg.dataset.format != "idx" && cfg.dataset.format != "cifar")
            throw ConfigError("config: dataset format must be idx or cifar");
        cfg.dataset.train_images = detail::get_or<std::string>(d, "train_images", "");
        cfg.dataset.train_labels = detail::get_or<std::string>(d, "train_labels", "");
        cfg.dataset.test_images = detail::get_or<std::string>(d, "test_images", "");
        cfg.dataset.test_labels = detail::get_or<std::string>(d, "test_labels", "");
        cfg.dataset.train_limit = detail::get_or<int>(d, "train_limit", 0);
        cfg.dataset.test_limit = detail::get_or<int>(d, "test_limit", 0);
    }
    if (j.contains("student")) cfg.student = detail::netspec_from_json(j.at("student"));
    else cfg.student.in_channels = 0;

    if (j.contains("kd")) {
        const auto& k = j.at("kd");
        cfg.kd.gamma = detail::get_or<double>(k, "gamma", cfg.kd.gamma);
        cfg.kd.lambda = detail::get_or<double>(k, "lambda", cfg.kd.lambda);
        cfg.kd.literal_power_temperature =
            detail::get_or<bool>(k, "literal_power_temperature", false);
    }
    if (j.contains("dkd")) {
        const auto& d = j.at("dkd");
        cfg.dkd.alpha_dkd = detail::get_or<double>(d, "alpha", cfg.dkd.alpha_dkd);
        cfg.dkd.beta_dkd = detail::get_or<double>(d, "beta", cfg.dkd.beta_dkd);
    }
    if (j.contains("uskd")) {
        const auto& u = j.at("uskd");
        cfg.uskd.alpha = detail::get_or<double>(u, "alpha", cfg.uskd.alpha);
        cfg.uskd.beta = detail::get_or<double>(u, "beta", cfg.uskd.beta);
        cfg.uskd.mu = detail::get_or<double>(u, "mu", cfg.uskd.mu);
        cfg.uskd.ls_epsilon = detail::get_or<double>(u, "ls_epsilon", cfg.uskd.ls_epsilon);
        if (u.contains("smooth_variant"))
            cfg.uskd.smooth_variant = parse_smooth_variant(u.at("smooth_variant").get<std::string>());
        if (u.contains("rank_variant"))
            cfg.uskd.rank_variant = parse_rank_variant(u.at("rank_variant").get<std::string>());
        cfg.uskd.weak_grad_to_backbone = detail::get_or<bool>(u, "weak_grad_to_backbone", false);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        cfg.optim.lr = detail::get_or<double>(o, "lr", cfg.optim.lr);
        cfg.optim.momentum = detail::get_or<double>(o, "momentum", cfg.optim.momentum);
        cfg.optim.weight_decay = detail::get_or<double>(o, "weight_decay", cfg.optim.weight_decay);
        cfg.optim.decay_epochs = detail::get_or<std::vector<int>>(o, "decay_epochs", {});
        cfg.optim.decay_factor = detail::get_or<double>(o, "decay_factor", 0.1);
    }
    return cfg;
}

// "--set kd.gamma=2.0" style override applied onto the raw JSON document;
// the value is parsed as JSON when possible, else taken as a string
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    std::string pointer = "/";
    for (char c : path) pointer += (c == '.') ? '/' : c;
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
        parsed = value;
    }
    j[nlohmann::json::json_pointer(pointer)] = parsed;
}

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
    nlohmann::json j = load_config_json(path);
    for (const auto& o : overrides) apply_override(j, o);
    try {
        return config_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config error in " + path + ": " + e.what());
    }
}

} // namespace nkd
