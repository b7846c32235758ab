#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relume/losses.hpp"
#include "relume/networks.hpp"

namespace relume {

using nlohmann::json;

enum class DecompositionMode { None, Learnt };

struct DataConfig {
    std::string layout = "multi-illumination"; // or "vidit"
    std::string root;
    std::vector<std::string> input_tags; // empty: derive (toy convention / vidit regime)
    std::string style_tag;
    std::string vidit_regime = "single-temperature"; // or "all-to-target"
};

struct TrainConfig {
    LossWeights weights;
    ModelsConfig models;
    FeatureExtractorConfig extractor;
    DataConfig data;
    DecompositionMode decomposition_mode = DecompositionMode::Learnt;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 1;
    std::int64_t max_iterations = 180000;
    std::uint64_t seed = 0;
    int image_height = 512;
    int image_width = 768;
    std::int64_t checkpoint_interval = 10000;
    std::int64_t metrics_interval = 1;

    /// Applies cross-field rules and validates. Mode "none" removes the
    /// decomposition network and its losses entirely.
    void resolve() {
        if (decomposition_mode == DecompositionMode::None) {
            weights.w_dcp = 0;
            weights.w_r = 0;
            models.use_decomposition = false;
        } else {
            models.use_decomposition = true;
        }
        weights.validate();
        models.generator.validate();
        models.decomposition.validate();
        models.discriminator.validate();
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (max_iterations < 0) throw ConfigError("config: max_iterations must be >= 0");
        if (lr <= 0) throw ConfigError("config: lr must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("config: momentum decay pair must be in [0,1)");
        if (image_height < 8 || image_width < 8)
            throw ConfigError("config: image size must be at least 8x8");
        if (checkpoint_interval < 1 || metrics_interval < 1)
            throw ConfigError("config: intervals must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// JSON mapping (full round-trip; every field serialized)
// ---------------------------------------------------------------------------

inline void to_json(json& j, const LossWeights& w) {
    j = json{{"w_gan", w.w_gan},       {"w_os", w.w_os},
             {"w_cp", w.w_cp},         {"w_r", w.w_r},
             {"w_dcp", w.w_dcp},       {"os_includes_l1", w.os_includes_l1},
             {"os_includes_gradient", w.os_includes_gradient}};
}
inline void from_json(const json& j, LossWeights& w) {
    w.w_gan = j.value("w_gan", w.w_gan);
    w.w_os = j.value("w_os", w.w_os);
    w.w_cp = j.value("w_cp", w.w_cp);
    w.w_r = j.value("w_r", w.w_r);
    w.w_dcp = j.value("w_dcp", w.w_dcp);
    w.os_includes_l1 = j.value("os_includes_l1", w.os_includes_l1);
    w.os_includes_gradient = j.value("os_includes_gradient", w.os_includes_gradient);
}

inline void to_json(json& j, const GeneratorConfig& c) {
    j = json{{"base_channels", c.base_channels}, {"n_downsample", c.n_downsample},
             {"n_resblocks", c.n_resblocks},     {"n_upsample", c.n_upsample},
             {"input_channels", c.input_channels}, {"output_channels", c.output_channels}};
}
inline void from_json(const json& j, GeneratorConfig& c) {
    c.base_channels = j.value("base_channels", c.base_channels);
    c.n_downsample = j.value("n_downsample", c.n_downsample);
    c.n_resblocks = j.value("n_resblocks", c.n_resblocks);
    c.n_upsample = j.value("n_upsample", c.n_upsample);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.output_channels = j.value("output_channels", c.output_channels);
}

inline void to_json(json& j, const DecompositionConfig& c) {
    j = json{{"base_channels", c.base_channels},
             {"depth", c.depth},
             {"input_channels", c.input_channels},
             {"shading_channels", c.shading_channels}};
}
inline void from_json(const json& j, DecompositionConfig& c) {
    c.base_channels = j.value("base_channels", c.base_channels);
    c.depth = j.value("depth", c.depth);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.shading_channels = j.value("shading_channels", c.shading_channels);
}

inline void to_json(json& j, const DiscriminatorConfig& c) {
    j = json{{"n_scales", c.n_scales},
             {"layers_per_scale", c.layers_per_scale},
             {"base_channels", c.base_channels},
             {"input_channels", c.input_channels}};
}
inline void from_json(const json& j, DiscriminatorConfig& c) {
    c.n_scales = j.value("n_scales", c.n_scales);
    c.layers_per_scale = j.value("layers_per_scale", c.layers_per_scale);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.input_channels = j.value("input_channels", c.input_channels);
}

inline void to_json(json& j, const ModelsConfig& c) {
    j = json{{"generator", c.generator},
             {"decomposition", c.decomposition},
             {"discriminator", c.discriminator},
             {"use_decomposition", c.use_decomposition}};
}
inline void from_json(const json& j, ModelsConfig& c) {
    if (j.contains("generator")) j.at("generator").get_to(c.generator);
    if (j.contains("decomposition")) j.at("decomposition").get_to(c.decomposition);
    if (j.contains("discriminator")) j.at("discriminator").get_to(c.discriminator);
    c.use_decomposition = j.value("use_decomposition", c.use_decomposition);
}

inline std::string extractor_kind_name(ExtractorKind k) {
    return k == ExtractorKind::PretrainedDeepFeatures ? "pretrained-deep-features"
                                                      : "fixed-random-pyramid";
}
inline ExtractorKind parse_extractor_kind(const std::string& s) {
    if (s == "pretrained-deep-features") return ExtractorKind::PretrainedDeepFeatures;
    if (s == "fixed-random-pyramid") return ExtractorKind::FixedRandomPyramid;
    throw ConfigError("config: unknown extractor kind: " + s);
}

inline void to_json(json& j, const FeatureExtractorConfig& c) {
    j = json{{"kind", extractor_kind_name(c.kind)},
             {"weights_path", c.weights_path},
             {"seed", c.seed}};
}
inline void from_json(const json& j, FeatureExtractorConfig& c) {
    if (j.contains("kind")) c.kind = parse_extractor_kind(j.at("kind").get<std::string>());
    c.weights_path = j.value("weights_path", c.weights_path);
    c.seed = j.value("seed", c.seed);
}

inline void to_json(json& j, const DataConfig& c) {
    j = json{{"layout", c.layout},
             {"root", c.root},
             {"input_tags", c.input_tags},
             {"style_tag", c.style_tag},
             {"vidit_regime", c.vidit_regime}};
}
inline void from_json(const json& j, DataConfig& c) {
    c.layout = j.value("layout", c.layout);
    c.root = j.value("root", c.root);
    if (j.contains("input_tags")) j.at("input_tags").get_to(c.input_tags);
    c.style_tag = j.value("style_tag", c.style_tag);
    c.vidit_regime = j.value("vidit_regime", c.vidit_regime);
}

inline std::string decomposition_mode_name(DecompositionMode m) {
    return m == DecompositionMode::Learnt ? "learnt" : "none";
}
inline DecompositionMode parse_decomposition_mode(const std::string& s) {
    if (s == "learnt") return DecompositionMode::Learnt;
    if (s == "none") return DecompositionMode::None;
    throw ConfigError("config: unknown decomposition_mode: " + s);
}

inline void to_json(json& j, const TrainConfig& c) {
    j = json{{"weights", c.weights},
             {"models", c.models},
             {"extractor", c.extractor},
             {"data", c.data},
             {"training",
              json{{"decomposition_mode", decomposition_mode_name(c.decomposition_mode)},
                   {"lr", c.lr},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"batch_size", c.batch_size},
                   {"max_iterations", c.max_iterations},
                   {"seed", c.seed},
                   {"image_height", c.image_height},
                   {"image_width", c.image_width},
                   {"checkpoint_interval", c.checkpoint_interval},
                   {"metrics_interval", c.metrics_interval}}}};
}
inline void from_json(const json& j, TrainConfig& c) {
    if (j.contains("weights")) j.at("weights").get_to(c.weights);
    if (j.contains("models")) j.at("models").get_to(c.models);
    if (j.contains("extractor")) j.at("extractor").get_to(c.extractor);
    if (j.contains("data")) j.at("data").get_to(c.data);
    if (j.contains("training")) {
        const json& t = j.at("training");
        if (t.contains("decomposition_mode"))
            c.decomposition_mode = parse_decomposition_mode(t.at("decomposition_mode").get<std::string>());
        c.lr = t.value("lr", c.lr);
        c.beta1 = t.value("beta1", c.beta1);
        c.beta2 = t.value("beta2", c.beta2);
        c.batch_size = t.value("batch_size", c.batch_size);
        c.max_iterations = t.value("max_iterations", c.max_iterations);
        c.seed = t.value("seed", c.seed);
        c.image_height = t.value("image_height", c.image_height);
        c.image_width = t.value("image_width", c.image_width);
        c.checkpoint_interval = t.value("checkpoint_interval", c.checkpoint_interval);
        c.metrics_interval = t.value("metrics_interval", c.metrics_interval);
    }
}

// ---------------------------------------------------------------------------
// loading, overrides, echo
// ---------------------------------------------------------------------------

namespace detail {

// Rejects keys that do not exist in the fully serialized default document,
// so typos in config files fail loudly instead of being ignored.
inline void check_known_keys(const json& candidate, const json& reference, const std::string& where) {
    if (!candidate.is_object() || !reference.is_object()) return;
    for (const auto& [key, value] : candidate.items()) {
        if (!reference.contains(key))
            throw ConfigError("config: unknown key '" + where + key + "'");
        check_known_keys(value, reference.at(key), where + key + ".");
    }
}

inline json parse_override_value(const std::string& text) {
    json parsed = json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return json(text); // bare strings stay strings
}

} // namespace detail

/// Override as written on a command line: key "weights.w_os", value "0".
using ConfigOverride = std::pair<std::string, std::string>;

/// Defaults <- config file (optional) <- overrides, then cross-field rules.
inline TrainConfig load_train_config(const std::filesystem::path& config_path,
                                     const std::vector<ConfigOverride>& overrides) {
    TrainConfig defaults;
    json doc = defaults;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("config: cannot read file: " + config_path.string());
        json file_doc = json::parse(is, nullptr, false);
        if (file_doc.is_discarded())
            throw ConfigError("config: malformed JSON in " + config_path.string());
        detail::check_known_keys(file_doc, doc, "");
        doc.merge_patch(file_doc);
    }
    for (const auto& [key, value] : overrides) {
        std::string pointer = "/" + key;
        for (auto& ch : pointer)
            if (ch == '.') ch = '/';
        json::json_pointer ptr(pointer);
        if (!doc.contains(ptr)) throw ConfigError("config: unknown override key '" + key + "'");
        doc[ptr] = detail::parse_override_value(value);
    }
    TrainConfig cfg;
    doc.get_to(cfg);
    cfg.resolve();
    return cfg;
}

/// Writes the fully resolved config into the run directory.
inline void echo_config(const TrainConfig& cfg, const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    std::ofstream os(run_dir / "config.json");
    if (!os) throw IoError("config: cannot write " + (run_dir / "config.json").string());
    os << json(cfg).dump(2) << "\n";
}

} // namespace relume
