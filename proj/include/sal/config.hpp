#pragma once
#include <string>
#include <vector>

#include <json.hpp>

#include "sal/augment.hpp"
#include "sal/losses.hpp"
#include "sal/model.hpp"
#include "sal/optim.hpp"
#include "sal/pairing.hpp"

namespace sal {

struct DataConfig {
    std::string manifest; // path to the dataset manifest
};

struct PretrainSchedule {
    OptimizerConfig optimizer{.type = "adam", .lr = 1e-3, .weight_decay = 0.0};
    int epochs = 10;
    int iterations_per_epoch = 30;

    void validate() const {
        optimizer.validate();
        require(epochs >= 1, "pretrain: epochs must be >= 1");
        require(iterations_per_epoch >= 1, "pretrain: iterations_per_epoch must be >= 1");
    }
};

struct FinetuneSchedule {
    OptimizerConfig optimizer{.type = "adam", .lr = 1e-4, .weight_decay = 0.0};
    int epochs = 20;
    int batch_size = 8;

    void validate() const {
        optimizer.validate();
        require(epochs >= 1, "finetune: epochs must be >= 1");
        require(batch_size >= 1, "finetune: batch_size must be >= 1");
    }
};

struct EvalProtocolConfig {
    int k = 5;
    std::vector<int> Ms = {2};

    void validate() const {
        require(k >= 2, "evaluate: k must be >= 2");
        require(!Ms.empty(), "evaluate: Ms must be nonempty");
        for (int m : Ms) require(m >= 1, "evaluate: every M must be >= 1");
    }
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DataConfig data;
    ModelConfig model;
    AugmentConfig augment;
    PairingConfig pairing;
    LossConfig loss;
    PretrainSchedule pretrain;
    FinetuneSchedule finetune;
    EvalProtocolConfig evaluate;

    int feature_grid_h() const { return augment.output_size[0] / model.stride_at(loss.s); }
    int feature_grid_w() const { return augment.output_size[1] / model.stride_at(loss.s); }

    // Cross-field checks; run before any work starts.
    void validate() const {
        model.validate();
        augment.validate();
        pairing.validate();
        loss.validate();
        pretrain.validate();
        finetune.validate();
        evaluate.validate();
        require(loss.s >= 1 && loss.s <= model.scales, "config: loss.s=", loss.s,
                " outside encoder scales [1, ", model.scales, "]");
        const int div = model.stride_at(model.scales);
        require(augment.output_size[0] % div == 0 && augment.output_size[1] % div == 0,
                "config: augment.output_size ", augment.output_size[0], "x",
                augment.output_size[1], " not divisible by encoder stride ", div);
        const int gh = feature_grid_h(), gw = feature_grid_w();
        require(gh % loss.omega == 0 && gw % loss.omega == 0,
                "config: feature grid ", gh, "x", gw, " (inputs ", augment.output_size[0], "x",
                augment.output_size[1], " at scale ", loss.s, ") not divisible by omega=",
                loss.omega);
    }
};

// ---------------------------------------------------------------------------
// JSON binding. Parsing is strict: unknown keys are rejected so typos in
// config files and --set overrides fail before any work starts.
// ---------------------------------------------------------------------------

namespace cfgio {

inline json to_json(const ExperimentConfig& c) {
    return json{
        {"seed", c.seed},
        {"data", {{"manifest", c.data.manifest}}},
        {"model",
         {{"base_width", c.model.base_width},
          {"scales", c.model.scales},
          {"in_channels", c.model.in_channels},
          {"proj_dim", c.model.proj_dim}}},
        {"augment",
         {{"crop_scale", c.augment.crop_scale},
          {"flip_prob", c.augment.flip_prob},
          {"intensity_jitter", c.augment.intensity_jitter},
          {"output_size", c.augment.output_size},
          {"shared_geometry", c.augment.shared_geometry},
          {"enable_rotation", c.augment.enable_rotation},
          {"rotation_max_deg", c.augment.rotation_max_deg},
          {"enable_elastic", c.augment.enable_elastic},
          {"elastic_sigma", c.augment.elastic_sigma},
          {"elastic_grid", c.augment.elastic_grid}}},
        {"pairing", {{"t", c.pairing.t}, {"n", c.pairing.n}}},
        {"loss",
         {{"lambda", c.loss.lambda},
          {"omega", c.loss.omega},
          {"tau", c.loss.tau},
          {"s", c.loss.s},
          {"la_axis", c.loss.la_axis == LaAxis::Row ? "row" : "col"},
          {"la_symmetric", c.loss.la_symmetric}}},
        {"pretrain",
         {{"optimizer",
           {{"type", c.pretrain.optimizer.type},
            {"lr", c.pretrain.optimizer.lr},
            {"weight_decay", c.pretrain.optimizer.weight_decay}}},
          {"epochs", c.pretrain.epochs},
          {"iterations_per_epoch", c.pretrain.iterations_per_epoch}}},
        {"finetune",
         {{"optimizer",
           {{"type", c.finetune.optimizer.type},
            {"lr", c.finetune.optimizer.lr},
            {"weight_decay", c.finetune.optimizer.weight_decay}}},
          {"epochs", c.finetune.epochs},
          {"batch_size", c.finetune.batch_size}}},
        {"evaluate", {{"k", c.evaluate.k}, {"Ms", c.evaluate.Ms}}}};
}

inline void check_known_keys(const json& candidate, const json& schema, const std::string& path) {
    if (!candidate.is_object()) return;
    require(schema.is_object(), "config: '", path, "' should not be an object");
    for (const auto& [key, val] : candidate.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        require(schema.contains(key), "config: unknown key '", here, "'");
        if (val.is_object()) check_known_keys(val, schema[key], here);
    }
}

inline OptimizerConfig parse_optimizer(const json& j, const OptimizerConfig& defaults) {
    OptimizerConfig o = defaults;
    o.type = j.value("type", o.type);
    o.lr = j.value("lr", o.lr);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    return o;
}

inline ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    check_known_keys(j, to_json(c), "");
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) c.data.manifest = j["data"].value("manifest", c.data.manifest);
    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.base_width = m.value("base_width", c.model.base_width);
        c.model.scales = m.value("scales", c.model.scales);
        c.model.in_channels = m.value("in_channels", c.model.in_channels);
        c.model.proj_dim = m.value("proj_dim", c.model.proj_dim);
    }
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        c.augment.crop_scale = a.value("crop_scale", c.augment.crop_scale);
        c.augment.flip_prob = a.value("flip_prob", c.augment.flip_prob);
        c.augment.intensity_jitter = a.value("intensity_jitter", c.augment.intensity_jitter);
        c.augment.output_size = a.value("output_size", c.augment.output_size);
        c.augment.shared_geometry = a.value("shared_geometry", c.augment.shared_geometry);
        c.augment.enable_rotation = a.value("enable_rotation", c.augment.enable_rotation);
        c.augment.rotation_max_deg = a.value("rotation_max_deg", c.augment.rotation_max_deg);
        c.augment.enable_elastic = a.value("enable_elastic", c.augment.enable_elastic);
        c.augment.elastic_sigma = a.value("elastic_sigma", c.augment.elastic_sigma);
        c.augment.elastic_grid = a.value("elastic_grid", c.augment.elastic_grid);
    }
    if (j.contains("pairing")) {
        c.pairing.t = j["pairing"].value("t", c.pairing.t);
        c.pairing.n = j["pairing"].value("n", c.pairing.n);
    }
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        c.loss.lambda = l.value("lambda", c.loss.lambda);
        c.loss.omega = l.value("omega", c.loss.omega);
        c.loss.tau = l.value("tau", c.loss.tau);
        c.loss.s = l.value("s", c.loss.s);
        const std::string axis = l.value("la_axis", std::string("row"));
        require(axis == "row" || axis == "col", "config: loss.la_axis must be 'row' or 'col'");
        c.loss.la_axis = axis == "row" ? LaAxis::Row : LaAxis::Col;
        c.loss.la_symmetric = l.value("la_symmetric", c.loss.la_symmetric);
    }
    if (j.contains("pretrain")) {
        const auto& p = j["pretrain"];
        if (p.contains("optimizer")) c.pretrain.optimizer = parse_optimizer(p["optimizer"], c.pretrain.optimizer);
        c.pretrain.epochs = p.value("epochs", c.pretrain.epochs);
        c.pretrain.iterations_per_epoch = p.value("iterations_per_epoch", c.pretrain.iterations_per_epoch);
    }
    if (j.contains("finetune")) {
        const auto& f = j["finetune"];
        if (f.contains("optimizer")) c.finetune.optimizer = parse_optimizer(f["optimizer"], c.finetune.optimizer);
        c.finetune.epochs = f.value("epochs", c.finetune.epochs);
        c.finetune.batch_size = f.value("batch_size", c.finetune.batch_size);
    }
    if (j.contains("evaluate")) {
        c.evaluate.k = j["evaluate"].value("k", c.evaluate.k);
        c.evaluate.Ms = j["evaluate"].value("Ms", c.evaluate.Ms);
    }
    return c;
}

// "a.b.c=value" into an existing tree; the path must already exist in the
// schema. Values parse as JSON scalars, falling back to raw strings.
inline void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, "override '", assignment, "' is not of the form key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    require(!path.empty(), "override has empty key: '", assignment, "'");

    json* node = &root;
    std::size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const auto dot = path.find('.', start);
        parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        require(node->is_object() && node->contains(parts[i]),
                "override: unknown config key '", path, "'");
        node = &(*node)[parts[i]];
    }
    require(node->is_object() && node->contains(parts.back()),
            "override: unknown config key '", path, "'");

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (...) {
        parsed = value; // plain string
    }
    (*node)[parts.back()] = parsed;
}

} // namespace cfgio

// Load a config file (optional), apply --set overrides, validate everything.
inline ExperimentConfig load_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides = {},
                                    const std::optional<std::uint64_t>& seed_flag = std::nullopt) {
    json j = cfgio::to_json(ExperimentConfig{});
    if (!config_path.empty()) {
        json file = detail::load_json_file(config_path);
        cfgio::check_known_keys(file, j, "");
        j.merge_patch(file);
    }
    for (const auto& o : overrides) cfgio::apply_override(j, o);
    ExperimentConfig cfg = cfgio::from_json(j);
    if (seed_flag) cfg.seed = *seed_flag;
    cfg.validate();
    return cfg;
}

} // namespace sal
