#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "relume/data.hpp"
#include "relume/image.hpp"
#include "relume/image_io.hpp"

namespace relume {

/// Procedural multi-illumination scenes with exact ground truth. Each scene
/// is a flat-coloured shape arrangement (reflectance) lit by per-direction
/// shading: a linear ramp plus an ambient floor, a Gaussian soft shadow and
/// a per-direction colour tint. The style direction is rendered flat, bright
/// and warm with no shadow, so it is a distinct target lighting domain.
struct ToyDatasetSpec {
    std::uint64_t seed = 0;
    int canvas = 64;       // square images
    int shape_count = 6;   // shapes drawn over the base albedo
    int n_train_scenes = 16;
    int n_test_scenes = 4;
    int n_dirs = 4;        // input tags dir_0 .. dir_{n_dirs-1}

    std::string style_tag() const { return "dir_" + std::to_string(n_dirs); }
    std::vector<std::string> input_tags() const {
        std::vector<std::string> tags;
        for (int d = 0; d < n_dirs; ++d) tags.push_back("dir_" + std::to_string(d));
        return tags;
    }
};

namespace toy_detail {

constexpr float kShadingFloor = 0.2f;

inline float quantize8(float v) {
    return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

inline void quantize8(Image& img) {
    for (float& v : img.data) v = quantize8(v);
}

// Flat-coloured random shapes (ellipses, rectangles, triangles) over a base
// albedo; every pixel keeps a single flat colour so reflectance is piecewise
// constant.
inline Image make_reflectance(int canvas, int shape_count, Rng& rng) {
    Image r(canvas, canvas, 3);
    float base[3];
    for (float& c : base) c = static_cast<float>(rng.uniform(0.25, 0.9));
    for (int y = 0; y < canvas; ++y)
        for (int x = 0; x < canvas; ++x)
            for (int c = 0; c < 3; ++c) r.at(y, x, c) = base[c];

    for (int s = 0; s < shape_count; ++s) {
        float col[3];
        for (float& c : col) c = static_cast<float>(rng.uniform(0.1, 0.95));
        int kind = static_cast<int>(rng.uniform_index(3));
        float cx = static_cast<float>(rng.uniform(0.1, 0.9)) * canvas;
        float cy = static_cast<float>(rng.uniform(0.1, 0.9)) * canvas;
        if (kind == 0) { // ellipse
            float rx = static_cast<float>(rng.uniform(0.06, 0.25)) * canvas;
            float ry = static_cast<float>(rng.uniform(0.06, 0.25)) * canvas;
            for (int y = 0; y < canvas; ++y)
                for (int x = 0; x < canvas; ++x) {
                    float dx = (x + 0.5f - cx) / rx, dy = (y + 0.5f - cy) / ry;
                    if (dx * dx + dy * dy <= 1.0f)
                        for (int c = 0; c < 3; ++c) r.at(y, x, c) = col[c];
                }
        } else if (kind == 1) { // axis-aligned rectangle
            float hw = static_cast<float>(rng.uniform(0.05, 0.2)) * canvas;
            float hh = static_cast<float>(rng.uniform(0.05, 0.2)) * canvas;
            for (int y = 0; y < canvas; ++y)
                for (int x = 0; x < canvas; ++x)
                    if (std::fabs(x + 0.5f - cx) <= hw && std::fabs(y + 0.5f - cy) <= hh)
                        for (int c = 0; c < 3; ++c) r.at(y, x, c) = col[c];
        } else { // triangle
            float px[3], py[3];
            for (int v = 0; v < 3; ++v) {
                px[v] = cx + static_cast<float>(rng.uniform(-0.22, 0.22)) * canvas;
                py[v] = cy + static_cast<float>(rng.uniform(-0.22, 0.22)) * canvas;
            }
            auto edge = [](float ax, float ay, float bx, float by, float qx, float qy) {
                return (bx - ax) * (qy - ay) - (by - ay) * (qx - ax);
            };
            for (int y = 0; y < canvas; ++y)
                for (int x = 0; x < canvas; ++x) {
                    float qx = x + 0.5f, qy = y + 0.5f;
                    float e0 = edge(px[0], py[0], px[1], py[1], qx, qy);
                    float e1 = edge(px[1], py[1], px[2], py[2], qx, qy);
                    float e2 = edge(px[2], py[2], px[0], py[0], qx, qy);
                    bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
                    if (inside)
                        for (int c = 0; c < 3; ++c) r.at(y, x, c) = col[c];
                }
        }
    }
    return r;
}

struct ShadingParams {
    int orientation = 0;     // 0:+x 1:-x 2:+y 3:-y ramp direction
    float floor = 0.35f;     // ramp start value
    float top = 0.95f;       // ramp end value
    float tint[3] = {1, 1, 1};
    bool shadow = false;
    float shadow_cx = 0, shadow_cy = 0, shadow_sigma = 8, shadow_amp = 0.4f;
};

// Ramp is monotone along its orientation; the shadow blob is confined to the
// lower half of the canvas so the top row stays an unclamped clean ramp.
inline ShadingParams sample_direction_params(int direction, int canvas, Rng& rng) {
    ShadingParams p;
    p.orientation = direction % 4;
    p.floor = static_cast<float>(rng.uniform(0.3, 0.4));
    p.top = 0.95f;
    int bright_channel = static_cast<int>(rng.uniform_index(3));
    for (int c = 0; c < 3; ++c)
        p.tint[c] = c == bright_channel ? 1.0f : static_cast<float>(rng.uniform(0.85, 1.0));
    p.shadow = true;
    p.shadow_cx = static_cast<float>(rng.uniform(0.2, 0.8)) * canvas;
    p.shadow_cy = static_cast<float>(rng.uniform(0.55, 0.8)) * canvas;
    p.shadow_sigma = static_cast<float>(rng.uniform(1.0 / 12, 1.0 / 10)) * canvas;
    p.shadow_amp = static_cast<float>(rng.uniform(0.3, 0.5));
    return p;
}

inline ShadingParams style_params() {
    ShadingParams p;
    p.orientation = 0;
    p.floor = 0.92f;
    p.top = 0.92f; // flat
    p.tint[0] = 1.0f;
    p.tint[1] = 0.97f;
    p.tint[2] = 0.88f;
    p.shadow = false;
    return p;
}

inline Image render_shading(const ShadingParams& p, int canvas) {
    Image s(canvas, canvas, 3);
    for (int y = 0; y < canvas; ++y)
        for (int x = 0; x < canvas; ++x) {
            float t = 0;
            switch (p.orientation) {
            case 0: t = (x + 0.5f) / canvas; break;
            case 1: t = 1.0f - (x + 0.5f) / canvas; break;
            case 2: t = (y + 0.5f) / canvas; break;
            default: t = 1.0f - (y + 0.5f) / canvas; break;
            }
            float v = p.floor + (p.top - p.floor) * t;
            if (p.shadow) {
                float dx = x + 0.5f - p.shadow_cx, dy = y + 0.5f - p.shadow_cy;
                v *= 1.0f - p.shadow_amp *
                                std::exp(-(dx * dx + dy * dy) / (2.0f * p.shadow_sigma * p.shadow_sigma));
            }
            for (int c = 0; c < 3; ++c)
                s.at(y, x, c) = std::clamp(v * p.tint[c], kShadingFloor, 1.0f);
        }
    return s;
}

inline void write_meta(const fs::path& path, const ToyDatasetSpec& spec,
                       std::uint64_t scene_seed, const std::string& scene_id) {
    std::ofstream os(path);
    if (!os) throw IoError("generate_toy_dataset: cannot write " + path.string());
    os << "scene_id=" << scene_id << "\n"
       << "scene_seed=" << scene_seed << "\n"
       << "dataset_seed=" << spec.seed << "\n"
       << "canvas=" << spec.canvas << "\n"
       << "shape_count=" << spec.shape_count << "\n"
       << "n_dirs=" << spec.n_dirs << "\n"
       << "style_tag=" << spec.style_tag() << "\n";
}

} // namespace toy_detail

/// Writes the dataset under `root` in the scene-directory layout:
///   root/{train,test}/<scene>/dir_<k>.png          (inputs; train also gets
///                                                    the style tag image)
///   root/{train,test}/<scene>/gt/reflectance.png
///   root/{train,test}/<scene>/gt/shading_dir_<k>.png
///   root/{train,test}/<scene>/gt/target.png         (style-lit render)
///   root/{train,test}/<scene>/gt/meta.txt
/// Reflectance and shading are quantized to 8 bits before recomposition, so
/// emitted images satisfy I = R*S up to one quantization step.
inline void generate_toy_dataset(const ToyDatasetSpec& spec, const fs::path& root) {
    require(spec.n_dirs >= 2, "generate_toy_dataset: need at least two input directions");
    require(spec.canvas >= 16, "generate_toy_dataset: canvas too small");
    require(spec.n_train_scenes >= 1, "generate_toy_dataset: need at least one train scene");

    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("generate_toy_dataset: cannot create " + root.string());

    int total = spec.n_train_scenes + spec.n_test_scenes;
    for (int idx = 0; idx < total; ++idx) {
        bool is_test = idx >= spec.n_train_scenes;
        std::uint64_t scene_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(idx));
        Rng rng(scene_seed);

        char name[32];
        std::snprintf(name, sizeof name, "scene_%03d", idx);
        fs::path scene_dir = root / (is_test ? "test" : "train") / name;
        fs::create_directories(scene_dir / "gt", ec);
        if (ec) throw IoError("generate_toy_dataset: cannot create " + scene_dir.string());

        Image r = toy_detail::make_reflectance(spec.canvas, spec.shape_count, rng);
        toy_detail::quantize8(r);
        save_image(r, (scene_dir / "gt" / "reflectance.png").string());

        auto emit = [&](const std::string& tag, const toy_detail::ShadingParams& p, bool as_input) {
            Image s = toy_detail::render_shading(p, spec.canvas);
            toy_detail::quantize8(s);
            save_image(s, (scene_dir / "gt" / ("shading_" + tag + ".png")).string());
            Image img = hadamard(r, s);
            if (as_input) save_image(img, (scene_dir / (tag + ".png")).string());
            return img;
        };

        for (int d = 0; d < spec.n_dirs; ++d)
            emit("dir_" + std::to_string(d), toy_detail::sample_direction_params(d, spec.canvas, rng),
                 true);

        Image target = emit(spec.style_tag(), toy_detail::style_params(), !is_test);
        save_image(target, (scene_dir / "gt" / "target.png").string());

        toy_detail::write_meta(scene_dir / "gt" / "meta.txt", spec, scene_seed, name);
    }
}

/// Ground-truth sidecars for one scene.
struct ToyGroundTruth {
    Image reflectance;
    std::map<std::string, Image> shading; // per tag
    Image target;
};

inline ToyGroundTruth load_toy_ground_truth(const fs::path& scene_dir, AccessLog* log = nullptr,
                                            AccessRole role = AccessRole::EvalTarget) {
    ToyGroundTruth gt;
    fs::path d = scene_dir / "gt";
    gt.reflectance = load_image_logged(d / "reflectance.png", role, log);
    gt.target = load_image_logged(d / "target.png", role, log);
    for (const auto& entry : fs::directory_iterator(d)) {
        std::string stem = entry.path().stem().string();
        if (stem.rfind("shading_", 0) == 0)
            gt.shading[stem.substr(8)] = load_image_logged(entry.path(), role, log);
    }
    return gt;
}

} // namespace relume
