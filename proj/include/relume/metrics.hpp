#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "relume/image_io.hpp"
#include "relume/losses.hpp"
#include "relume/toy.hpp"
#include "relume/training.hpp"

namespace relume {

// ---------------------------------------------------------------------------
// image metrics
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> ssim_kernel() {
    constexpr int n = 11;
    constexpr double sigma = 1.5;
    std::vector<double> k(n);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        double d = i - (n - 1) / 2.0;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

/// Valid-region separable Gaussian filter of one channel; output (h-10)x(w-10).
inline std::vector<double> ssim_filter(const Image& img, int c, const std::vector<double>& k) {
    const int h = img.height, w = img.width, n = static_cast<int>(k.size());
    const int wo = w - n + 1, ho = h - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * static_cast<std::size_t>(wo));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wo; ++x) {
            double acc = 0;
            for (int i = 0; i < n; ++i)
                acc += k[static_cast<std::size_t>(i)] * img.at(y, x + i, c);
            rows[static_cast<std::size_t>(y) * static_cast<std::size_t>(wo) +
                 static_cast<std::size_t>(x)] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo));
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            double acc = 0;
            for (int i = 0; i < n; ++i)
                acc += k[static_cast<std::size_t>(i)] *
                       rows[static_cast<std::size_t>(y + i) * static_cast<std::size_t>(wo) +
                            static_cast<std::size_t>(x)];
            out[static_cast<std::size_t>(y) * static_cast<std::size_t>(wo) +
                static_cast<std::size_t>(x)] = acc;
        }
    return out;
}

} // namespace detail

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1, windows fully inside the image, channels averaged.
inline double ssim(const Image& a, const Image& b) {
    require(a.same_shape(b), "ssim: shape mismatch");
    require(a.height >= 11 && a.width >= 11, "ssim: images must be at least 11x11");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const std::vector<double> k = detail::ssim_kernel();
    double channel_sum = 0;
    for (int c = 0; c < a.channels; ++c) {
        Image aa(a.height, a.width, 1), bb(a.height, a.width, 1), ab(a.height, a.width, 1);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                float va = a.at(y, x, c), vb = b.at(y, x, c);
                aa.at(y, x, 0) = va * va;
                bb.at(y, x, 0) = vb * vb;
                ab.at(y, x, 0) = va * vb;
            }
        std::vector<double> mu_a = detail::ssim_filter(a, c, k);
        std::vector<double> mu_b = detail::ssim_filter(b, c, k);
        std::vector<double> e_aa = detail::ssim_filter(aa, 0, k);
        std::vector<double> e_bb = detail::ssim_filter(bb, 0, k);
        std::vector<double> e_ab = detail::ssim_filter(ab, 0, k);
        double acc = 0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = e_aa[i] - ma * ma;
            const double vb = e_bb[i] - mb * mb;
            const double cov = e_ab[i] - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        channel_sum += acc / static_cast<double>(mu_a.size());
    }
    return channel_sum / a.channels;
}

/// 10*log10(1/MSE) over all channels jointly; identical images give +inf.
inline double psnr(const Image& a, const Image& b) {
    require(a.same_shape(b), "psnr: shape mismatch");
    double se = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

inline double perceptual_distance(const FeatureExtractor& extractor, const Image& a,
                                  const Image& b) {
    return loss_content(extractor, a, b);
}

// ---------------------------------------------------------------------------
// dataset-level evaluation
// ---------------------------------------------------------------------------

struct EvalItem {
    std::string scene_id;
    std::string input_tag;
    fs::path input_path;
    fs::path target_path; // empty: missing target, the item is skipped
};

/// Real layouts: the target is the scene's own image under target_tag.
inline std::vector<EvalItem> collect_eval_items(const DatasetView& view,
                                                const std::string& target_tag) {
    std::vector<EvalItem> items;
    for (const auto& scene : view.test_scenes)
        for (const auto& tag : view.input_tags) {
            auto in = scene.images.find(tag);
            if (in == scene.images.end()) continue;
            EvalItem item{scene.scene_id, tag, in->second, {}};
            auto gt = scene.images.find(target_tag);
            if (gt != scene.images.end()) item.target_path = gt->second;
            items.push_back(std::move(item));
        }
    return items;
}

/// Toy layout: targets live in each test scene's gt/ sidecar directory.
inline std::vector<EvalItem> collect_toy_eval_items(const fs::path& toy_root,
                                                    const std::vector<std::string>& input_tags) {
    std::vector<EvalItem> items;
    std::vector<fs::path> scene_dirs;
    const fs::path test_root = toy_root / "test";
    if (fs::exists(test_root))
        for (const auto& e : fs::directory_iterator(test_root))
            if (e.is_directory()) scene_dirs.push_back(e.path());
    std::sort(scene_dirs.begin(), scene_dirs.end());
    for (const auto& dir : scene_dirs)
        for (const auto& tag : input_tags) {
            EvalItem item{dir.filename().string(), tag, dir / (tag + ".png"), {}};
            const fs::path target = dir / "gt" / "target.png";
            if (fs::exists(target)) item.target_path = target;
            items.push_back(std::move(item));
        }
    return items;
}

struct MetricsRow {
    std::string scene_id;
    std::string input_tag;
    double ssim = 0;
    double psnr = 0;
    double vgg = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    double mean_ssim = 0;
    double mean_psnr = 0;
    double mean_vgg = 0;
    int evaluated = 0;
    int skipped_missing_target = 0;
    int infinite_psnr = 0;
};

/// Applies `transform` to each input and scores it against the target.
/// Missing targets are skipped with a warning and counted. Summation order
/// is the item order, so repeated runs aggregate identically.
inline MetricsReport evaluate_with(const std::function<Image(const Image&)>& transform,
                                   const FeatureExtractor& extractor,
                                   const std::vector<EvalItem>& items,
                                   AccessLog* log = nullptr, std::ostream* warn = nullptr) {
    MetricsReport report;
    double sum_ssim = 0, sum_psnr = 0, sum_vgg = 0;
    for (const auto& item : items) {
        if (item.target_path.empty()) {
            ++report.skipped_missing_target;
            if (warn)
                (*warn) << "warning: no evaluation target for scene '" << item.scene_id
                        << "' input '" << item.input_tag << "', skipping\n";
            continue;
        }
        Image input = load_image_logged(item.input_path, AccessRole::TrainInput, log);
        Image target = load_image_logged(item.target_path, AccessRole::EvalTarget, log);
        Image output = transform(input);
        if (!output.same_shape(target)) target = resize(target, output.height, output.width);
        MetricsRow row{item.scene_id, item.input_tag, ssim(output, target),
                       psnr(output, target), perceptual_distance(extractor, output, target)};
        if (std::isinf(row.psnr)) ++report.infinite_psnr;
        sum_ssim += row.ssim;
        sum_psnr += row.psnr;
        sum_vgg += row.vgg;
        report.rows.push_back(std::move(row));
        ++report.evaluated;
    }
    if (report.evaluated > 0) {
        report.mean_ssim = sum_ssim / report.evaluated;
        report.mean_psnr = sum_psnr / report.evaluated;
        report.mean_vgg = sum_vgg / report.evaluated;
    }
    return report;
}

inline MetricsReport evaluate(const ModelBundle& bundle, const FeatureExtractor& extractor,
                              const std::vector<EvalItem>& items, AccessLog* log = nullptr,
                              std::ostream* warn = nullptr) {
    return evaluate_with([&bundle](const Image& in) { return infer_image(bundle, in); },
                         extractor, items, log, warn);
}

/// Score of leaving every input unchanged; the floor a trained model must beat.
inline MetricsReport evaluate_identity_baseline(const FeatureExtractor& extractor,
                                                const std::vector<EvalItem>& items,
                                                AccessLog* log = nullptr,
                                                std::ostream* warn = nullptr) {
    return evaluate_with([](const Image& in) { return in; }, extractor, items, log, warn);
}

// ---------------------------------------------------------------------------
// report rendering
// ---------------------------------------------------------------------------

namespace detail {

inline json metric_value(double v) {
    if (std::isinf(v)) return json("inf");
    return json(v);
}

} // namespace detail

inline json metrics_report_to_json(const MetricsReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back(json{{"scene", row.scene_id},
                            {"input", row.input_tag},
                            {"ssim", row.ssim},
                            {"psnr", detail::metric_value(row.psnr)},
                            {"vgg", row.vgg}});
    return json{{"rows", rows},
                {"aggregate",
                 json{{"ssim", r.mean_ssim},
                      {"psnr", detail::metric_value(r.mean_psnr)},
                      {"vgg", r.mean_vgg}}},
                {"counts",
                 json{{"evaluated", r.evaluated},
                      {"skipped_missing_target", r.skipped_missing_target},
                      {"infinite_psnr", r.infinite_psnr}}}};
}

namespace detail {

inline std::string fmt_metric(double v) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace detail

inline std::string render_metrics_table(const MetricsReport& r) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %-12s %8s %8s %8s\n", "scene", "input", "SSIM",
                  "PSNR", "VGG");
    out += line;
    for (const auto& row : r.rows) {
        std::snprintf(line, sizeof(line), "%-24s %-12s %8s %8s %8s\n", row.scene_id.c_str(),
                      row.input_tag.c_str(), detail::fmt_metric(row.ssim).c_str(),
                      detail::fmt_metric(row.psnr).c_str(), detail::fmt_metric(row.vgg).c_str());
        out += line;
    }
    std::snprintf(line, sizeof(line), "%-24s %-12s %8s %8s %8s\n", "mean", "-",
                  detail::fmt_metric(r.mean_ssim).c_str(), detail::fmt_metric(r.mean_psnr).c_str(),
                  detail::fmt_metric(r.mean_vgg).c_str());
    out += line;
    std::snprintf(line, sizeof(line), "evaluated %d, skipped (missing target) %d\n", r.evaluated,
                  r.skipped_missing_target);
    out += line;
    return out;
}

inline void write_metrics_report(const MetricsReport& r, const fs::path& json_path,
                                 const fs::path& table_path) {
    {
        std::ofstream os(json_path);
        if (!os) throw IoError("write_metrics_report: cannot write " + json_path.string());
        os << metrics_report_to_json(r).dump(2) << "\n";
    }
    {
        std::ofstream os(table_path);
        if (!os) throw IoError("write_metrics_report: cannot write " + table_path.string());
        os << render_metrics_table(r);
    }
}

// ---------------------------------------------------------------------------
// ablation runner
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    LossWeights weights;
    bool ok = false;
    std::string error;
    MetricsReport metrics;
};

struct AblationResult {
    std::vector<AblationRow> rows;
};

/// Adversarial + reconstruction base, then each auxiliary loss switched in.
inline std::vector<std::pair<std::string, TrainConfig>> loss_ablation_grid(
    const TrainConfig& base) {
    auto with = [&](double os, double cp, double r) {
        TrainConfig c = base;
        c.weights.w_os = os;
        c.weights.w_cp = cp;
        c.weights.w_r = r;
        return c;
    };
    const LossWeights& w = base.weights;
    return {{"core", with(0, 0, 0)},
            {"core+os", with(w.w_os, 0, 0)},
            {"core+cp", with(0, w.w_cp, 0)},
            {"core+os+cp", with(w.w_os, w.w_cp, 0)},
            {"core+os+cp+r", with(w.w_os, w.w_cp, w.w_r)}};
}

/// Output-similarity composition: none, absolute term, absolute + gradient.
inline std::vector<std::pair<std::string, TrainConfig>> os_variants_grid(const TrainConfig& base) {
    auto with = [&](bool any, bool l1, bool grad) {
        TrainConfig c = base;
        c.weights.w_os = any ? base.weights.w_os : 0;
        c.weights.os_includes_l1 = l1;
        c.weights.os_includes_gradient = grad;
        c.weights.w_cp = 0;
        c.weights.w_r = 0;
        return c;
    };
    return {{"core", with(false, true, true)},
            {"core+l1", with(true, true, false)},
            {"core+l1+grad", with(true, true, true)}};
}

/// Trains and evaluates every row from the same seed; a row failure is
/// recorded and the remaining rows still run.
inline AblationResult run_ablation(const std::vector<std::pair<std::string, TrainConfig>>& grid,
                                   const DatasetView& view, const std::vector<EvalItem>& items,
                                   const fs::path& run_root, AccessLog* log = nullptr,
                                   std::ostream* warn = nullptr) {
    AblationResult result;
    for (const auto& [name, cfg] : grid) {
        AblationRow row;
        row.name = name;
        row.weights = cfg.weights;
        try {
            TrainLoopResult tr = train_loop(cfg, view, run_root / name, log);
            LoadedModels lm = load_models(tr.checkpoint_path);
            FeatureExtractor extractor(lm.cfg.extractor);
            row.metrics = evaluate(lm.bundle, extractor, items, log, warn);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
            if (warn) (*warn) << "ablation row '" << name << "' failed: " << e.what() << "\n";
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

inline std::string render_ablation_table(const AblationResult& r) {
    std::string out;
    char line[200];
    std::snprintf(line, sizeof(line), "%-16s %4s %4s %4s %4s %4s %8s %8s %8s\n", "name", "gan",
                  "os", "cp", "r", "dcp", "SSIM", "PSNR", "VGG");
    out += line;
    for (const auto& row : r.rows) {
        auto flag = [](double w) { return w > 0 ? "x" : "-"; };
        std::string os_flag = "-";
        if (row.weights.w_os > 0) {
            os_flag = row.weights.os_includes_l1 ? "x" : "";
            if (row.weights.os_includes_gradient) os_flag += "g";
        }
        if (row.ok)
            std::snprintf(line, sizeof(line), "%-16s %4s %4s %4s %4s %4s %8s %8s %8s\n",
                          row.name.c_str(), flag(row.weights.w_gan), os_flag.c_str(),
                          flag(row.weights.w_cp), flag(row.weights.w_r), flag(row.weights.w_dcp),
                          detail::fmt_metric(row.metrics.mean_ssim).c_str(),
                          detail::fmt_metric(row.metrics.mean_psnr).c_str(),
                          detail::fmt_metric(row.metrics.mean_vgg).c_str());
        else
            std::snprintf(line, sizeof(line), "%-16s %4s %4s %4s %4s %4s %s\n", row.name.c_str(),
                          flag(row.weights.w_gan), os_flag.c_str(), flag(row.weights.w_cp),
                          flag(row.weights.w_r), flag(row.weights.w_dcp),
                          ("FAILED: " + row.error).c_str());
        out += line;
    }
    return out;
}

inline json ablation_to_json(const AblationResult& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        json entry{{"name", row.name},
                   {"ok", row.ok},
                   {"weights", row.weights}};
        if (row.ok)
            entry["metrics"] = json{{"ssim", row.metrics.mean_ssim},
                                    {"psnr", detail::metric_value(row.metrics.mean_psnr)},
                                    {"vgg", row.metrics.mean_vgg}};
        else
            entry["error"] = row.error;
        rows.push_back(std::move(entry));
    }
    return json{{"rows", rows}};
}

// ---------------------------------------------------------------------------
// decomposition dump
// ---------------------------------------------------------------------------

/// Writes reflectance, shading and restyled-shading maps for each input;
/// returns the written paths (three per input).
inline std::vector<fs::path> dump_decomposition(const ModelBundle& bundle,
                                                const std::vector<fs::path>& inputs,
                                                const fs::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<fs::path> written;
    for (const auto& in : inputs) {
        Image img = load_image(in);
        RestyleArtifacts art = run_restyle_with_artifacts(bundle, img);
        const std::string stem = in.stem().string();
        const fs::path r = out_dir / (stem + "_reflectance.png");
        const fs::path s = out_dir / (stem + "_shading.png");
        const fs::path sh = out_dir / (stem + "_restyled_shading.png");
        save_image(art.reflectance, r);
        save_image(art.shading, s);
        save_image(art.restyled_shading, sh);
        written.push_back(r);
        written.push_back(s);
        written.push_back(sh);
    }
    return written;
}

} // namespace relume
