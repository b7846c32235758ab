#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relume/metrics.hpp"
#include "relume/toy.hpp"
#include "relume/training.hpp"

namespace fs = std::filesystem;
using namespace relume;

namespace {

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

/// Leftover args after the named flags: pairs of `--section.key value`.
std::vector<ConfigOverride> parse_overrides(const std::vector<std::string>& extras) {
    std::vector<ConfigOverride> overrides;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& tok = extras[i];
        if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos)
            throw ConfigError("unrecognized argument: " + tok +
                              " (overrides look like --section.key value)");
        if (i + 1 >= extras.size())
            throw ConfigError("override " + tok + " is missing a value");
        overrides.emplace_back(tok.substr(2), extras[i + 1]);
        ++i;
    }
    return overrides;
}

fs::path default_run_root() {
    if (const char* env = std::getenv("RELUME_RUN_ROOT")) return fs::path(env);
    return fs::path("runs");
}

/// <run_root>/<utc timestamp>_<name>, suffixed if the directory exists.
fs::path fresh_run_dir(const std::string& name) {
    std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
    fs::path base = default_run_root() / (std::string(stamp) + "_" + name);
    fs::path dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
    return dir;
}

DatasetView build_view(const DataConfig& d) {
    if (d.root.empty()) throw ConfigError("data.root is not set");
    if (d.layout == "multi-illumination") {
        auto scenes = scan_multiillum_layout(d.root);
        if (d.input_tags.empty())
            throw ConfigError("data.input_tags must be set for the multi-illumination layout");
        if (d.style_tag.empty()) throw ConfigError("data.style_tag is not set");
        return make_dataset_view(scenes, d.input_tags, d.style_tag);
    }
    if (d.layout == "vidit") {
        auto scenes = scan_vidit_layout(d.root);
        ViditRegime regime;
        if (d.vidit_regime == "single-temperature")
            regime = ViditRegime::SingleTemperature;
        else if (d.vidit_regime == "all-to-target")
            regime = ViditRegime::AllToTarget;
        else
            throw ConfigError("unknown data.vidit_regime: " + d.vidit_regime);
        TagSelection sel = d.style_tag.empty()
                               ? vidit_regime_tags(scenes, regime)
                               : vidit_regime_tags(scenes, regime, d.style_tag);
        return make_dataset_view(scenes, sel.input_tags, sel.style_tag);
    }
    throw ConfigError("unknown data.layout: " + d.layout);
}

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> collect_inputs(const fs::path& input) {
    if (fs::is_directory(input)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigError("no images found in " + input.string());
        return files;
    }
    if (!fs::exists(input)) throw ConfigError("input does not exist: " + input.string());
    return {input};
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_make_toy_data(const ToyDatasetSpec& spec, const fs::path& out) {
    generate_toy_dataset(spec, out);
    std::cout << "wrote toy dataset to " << out.string() << " (" << spec.n_train_scenes
              << " train, " << spec.n_test_scenes << " test scenes, " << spec.n_dirs
              << " directions + style '" << spec.style_tag() << "')\n";
    return 0;
}

int cmd_train(const fs::path& config_path, const std::vector<ConfigOverride>& overrides,
              fs::path run_dir, const std::string& name) {
    TrainConfig cfg = load_train_config(config_path, overrides);
    DatasetView view = build_view(cfg.data);
    if (run_dir.empty()) run_dir = fresh_run_dir(name);
    std::cout << "run directory: " << run_dir.string() << "\n";
    TrainLoopResult result = train_loop(cfg, view, run_dir);
    std::cout << "trained " << result.iterations_run << " iteration(s); checkpoint at "
              << result.checkpoint_path.string() << "\n";
    return 0;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& input, const fs::path& out_dir) {
    LoadedModels lm = load_models(checkpoint);
    std::vector<fs::path> files = collect_inputs(input);
    fs::create_directories(out_dir);
    int ok = 0;
    for (const auto& f : files) {
        try {
            Image img = load_image(f);
            Image result = infer_image(lm.bundle, img);
            save_image(result, out_dir / f.filename());
            ++ok;
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
        }
    }
    std::cout << "restyled " << ok << "/" << files.size() << " image(s) into "
              << out_dir.string() << "\n";
    return ok > 0 ? 0 : 1;
}

int cmd_eval(const fs::path& checkpoint, const std::string& targets, const fs::path& data_root,
             fs::path out_dir) {
    LoadedModels lm = load_models(checkpoint);
    if (!data_root.empty()) lm.cfg.data.root = data_root.string();
    FeatureExtractor extractor(lm.cfg.extractor);
    std::vector<EvalItem> items;
    if (targets == "toy-gt") {
        if (lm.cfg.data.input_tags.empty())
            throw ConfigError("checkpoint config has no data.input_tags for toy evaluation");
        items = collect_toy_eval_items(lm.cfg.data.root, lm.cfg.data.input_tags);
    } else if (targets == "scene-tag") {
        DatasetView view = build_view(lm.cfg.data);
        items = collect_eval_items(view, view.style.tag);
    } else {
        throw ConfigError("unknown --targets mode: " + targets + " (scene-tag or toy-gt)");
    }
    MetricsReport report = evaluate(lm.bundle, extractor, items, nullptr, &std::cerr);
    if (out_dir.empty()) out_dir = checkpoint.parent_path() / "eval";
    fs::create_directories(out_dir);
    write_metrics_report(report, out_dir / "metrics.json", out_dir / "metrics.txt");
    std::cout << render_metrics_table(report);
    std::cout << "report written to " << (out_dir / "metrics.json").string() << "\n";
    return report.evaluated > 0 ? 0 : 1;
}

int cmd_ablate(const fs::path& config_path, const std::vector<ConfigOverride>& overrides,
               const std::string& grid_name, fs::path run_root) {
    TrainConfig base = load_train_config(config_path, overrides);
    DatasetView view = build_view(base.data);
    std::vector<std::pair<std::string, TrainConfig>> grid;
    if (grid_name == "loss-ablation")
        grid = loss_ablation_grid(base);
    else if (grid_name == "os-variants")
        grid = os_variants_grid(base);
    else
        throw ConfigError("unknown --grid: " + grid_name + " (loss-ablation or os-variants)");
    std::vector<EvalItem> items =
        base.data.layout == "multi-illumination" && !base.data.input_tags.empty() &&
                fs::exists(fs::path(base.data.root) / "test")
            ? collect_toy_eval_items(base.data.root, base.data.input_tags)
            : collect_eval_items(view, view.style.tag);
    // real-layout scene-tag targets when toy sidecars are absent
    bool has_targets = false;
    for (const auto& it : items) has_targets |= !it.target_path.empty();
    if (!has_targets) items = collect_eval_items(view, view.style.tag);
    if (run_root.empty()) run_root = fresh_run_dir("ablate");
    std::cout << "ablation root: " << run_root.string() << "\n";
    AblationResult result = run_ablation(grid, view, items, run_root, nullptr, &std::cerr);
    fs::create_directories(run_root);
    {
        std::ofstream os(run_root / "ablation.json");
        os << ablation_to_json(result).dump(2) << "\n";
    }
    std::string table = render_ablation_table(result);
    {
        std::ofstream os(run_root / "ablation.txt");
        os << table;
    }
    std::cout << table;
    int ok = 0;
    for (const auto& row : result.rows) ok += row.ok ? 1 : 0;
    return ok > 0 ? 0 : 1;
}

int cmd_decompose_dump(const fs::path& checkpoint, const fs::path& input, const fs::path& out) {
    LoadedModels lm = load_models(checkpoint);
    std::vector<fs::path> files = collect_inputs(input);
    std::vector<fs::path> written = dump_decomposition(lm.bundle, files, out);
    std::cout << "wrote " << written.size() << " map(s) for " << files.size()
              << " input(s) into " << out.string() << "\n";
    return written.empty() ? 1 : 0;
}

int cmd_sweep_resolution(const fs::path& checkpoint, const fs::path& input,
                         const std::vector<double>& scales, const fs::path& out_dir) {
    LoadedModels lm = load_models(checkpoint);
    Image img = load_image(input);
    fs::create_directories(out_dir);
    int written = 0;
    for (double s : scales) {
        const int h = static_cast<int>(std::lround(img.height * s));
        const int w = static_cast<int>(std::lround(img.width * s));
        if (s <= 0 || h < 8 || w < 8) {
            std::cerr << "warning: skipping degenerate scale " << s << " (" << w << "x" << h
                      << ")\n";
            continue;
        }
        Image scaled = (h == img.height && w == img.width) ? img : resize(img, h, w);
        Image result = infer_image(lm.bundle, scaled);
        char label[64];
        std::snprintf(label, sizeof(label), "_%dx%d", result.width, result.height);
        fs::path path = out_dir / (input.stem().string() + label + input.extension().string());
        save_image(result, path);
        std::cout << "scale " << s << " -> " << path.filename().string() << " (" << result.width
                  << "x" << result.height << ")\n";
        ++written;
    }
    return written > 0 ? 0 : 1;
}

int cmd_report_complexity(const fs::path& config_path, const std::vector<ConfigOverride>& overrides,
                          const std::vector<std::string>& resolutions) {
    TrainConfig cfg = load_train_config(config_path, overrides);
    ModelBundle bundle = build_models(cfg.models, cfg.seed);
    if (cfg.weights.w_cp > 0) {
        FeatureExtractor extractor(cfg.extractor);
        bundle.frozen_aux_params = extractor.param_count();
        ParamCounts pc = count_params(bundle);
        bundle.total_params = pc.total;
        bundle.trainable_params = pc.trainable;
    }
    std::printf("total_params %lld\n", static_cast<long long>(bundle.total_params));
    std::printf("trainable_params %lld\n", static_cast<long long>(bundle.trainable_params));
    for (const auto& r : resolutions) {
        const std::size_t x = r.find('x');
        int w = 0, h = 0;
        if (x != std::string::npos) {
            try {
                w = std::stoi(r.substr(0, x));
                h = std::stoi(r.substr(x + 1));
            } catch (const std::exception&) {
                w = h = 0;
            }
        }
        if (w < 8 || h < 8 || w % 8 != 0 || h % 8 != 0)
            throw ConfigError("invalid resolution '" + r +
                              "' (expected <width>x<height>, multiples of 8)");
        std::printf("gflops %dx%d %.3f\n", w, h, estimate_gflops(bundle, h, w));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised lighting restyle toolkit"};
    app.require_subcommand(1);

    // make-toy-data
    auto* make_toy = app.add_subcommand("make-toy-data", "render a synthetic training dataset");
    ToyDatasetSpec toy_spec;
    fs::path toy_out;
    make_toy->add_option("--out", toy_out, "output directory")->required();
    make_toy->add_option("--seed", toy_spec.seed, "dataset seed");
    make_toy->add_option("--canvas", toy_spec.canvas, "image side length");
    make_toy->add_option("--shapes", toy_spec.shape_count, "shapes per scene");
    make_toy->add_option("--train-scenes", toy_spec.n_train_scenes, "training scene count");
    make_toy->add_option("--test-scenes", toy_spec.n_test_scenes, "test scene count");
    make_toy->add_option("--dirs", toy_spec.n_dirs, "lighting directions per scene");

    // train
    auto* train = app.add_subcommand("train", "run the training loop");
    train->allow_extras();
    fs::path train_config, train_run_dir;
    std::string train_name = "train";
    train->add_option("config,--config", train_config, "config file (JSON)");
    train->add_option("--run-dir", train_run_dir, "run directory (default: timestamped)");
    train->add_option("--name", train_name, "run name used in the directory stamp");

    // infer
    auto* infer = app.add_subcommand("infer", "restyle one image or a directory");
    fs::path infer_ckpt, infer_input, infer_out = "restyled";
    infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
    infer->add_option("--input", infer_input, "image file or directory")->required();
    infer->add_option("--out", infer_out, "output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    fs::path eval_ckpt, eval_root, eval_out;
    std::string eval_targets = "scene-tag";
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_option("--targets", eval_targets, "target source: scene-tag or toy-gt");
    eval->add_option("--data-root", eval_root, "override the dataset root");
    eval->add_option("--out", eval_out, "report directory (default: beside checkpoint)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train and score a config grid");
    ablate->allow_extras();
    fs::path ablate_config, ablate_root;
    std::string ablate_grid = "loss-ablation";
    ablate->add_option("config,--config", ablate_config, "base config file (JSON)");
    ablate->add_option("--grid", ablate_grid, "loss-ablation or os-variants");
    ablate->add_option("--run-root", ablate_root, "directory for per-row runs");

    // decompose-dump
    auto* dump = app.add_subcommand("decompose-dump", "write reflectance/shading maps");
    fs::path dump_ckpt, dump_input, dump_out = "decomposition";
    dump->add_option("--checkpoint", dump_ckpt, "trained checkpoint")->required();
    dump->add_option("--input", dump_input, "image file or directory")->required();
    dump->add_option("--out", dump_out, "output directory");

    // sweep-resolution
    auto* sweep = app.add_subcommand("sweep-resolution", "restyle one image at several scales");
    fs::path sweep_ckpt, sweep_input, sweep_out = "sweep";
    std::vector<double> sweep_scales{1.0, 0.5, 0.25};
    sweep->add_option("--checkpoint", sweep_ckpt, "trained checkpoint")->required();
    sweep->add_option("--input", sweep_input, "image file")->required();
    sweep->add_option("--scales", sweep_scales, "scale factors")->delimiter(',');
    sweep->add_option("--out", sweep_out, "output directory");

    // report-complexity
    auto* report = app.add_subcommand("report-complexity", "parameter and GFLOP summary");
    report->allow_extras();
    fs::path report_config;
    std::vector<std::string> report_res{"768x512"};
    report->add_option("config,--config", report_config, "config file (JSON)");
    report->add_option("--resolutions", report_res, "<width>x<height> list")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (make_toy->parsed()) return cmd_make_toy_data(toy_spec, toy_out);
        if (train->parsed())
            return cmd_train(train_config, parse_overrides(train->remaining()), train_run_dir,
                             train_name);
        if (infer->parsed()) return cmd_infer(infer_ckpt, infer_input, infer_out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_targets, eval_root, eval_out);
        if (ablate->parsed())
            return cmd_ablate(ablate_config, parse_overrides(ablate->remaining()), ablate_grid,
                              ablate_root);
        if (dump->parsed()) return cmd_decompose_dump(dump_ckpt, dump_input, dump_out);
        if (sweep->parsed())
            return cmd_sweep_resolution(sweep_ckpt, sweep_input, sweep_scales, sweep_out);
        if (report->parsed())
            return cmd_report_complexity(report_config, parse_overrides(report->remaining()),
                                         report_res);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
