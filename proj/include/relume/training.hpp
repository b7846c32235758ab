#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relume/checkpoint.hpp"
#include "relume/config.hpp"
#include "relume/data.hpp"
#include "relume/losses.hpp"
#include "relume/networks.hpp"
#include "relume/perceptual.hpp"
#include "relume/tensor_ops.hpp"

namespace relume {

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed parameter list. Moment buffers are
/// float32 so a checkpoint round-trip restores them bit-exactly.
class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(std::vector<nn::Parameter> params, AdamConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<std::size_t>(params_[i].tensor.numel()), 0.0f);
            v_[i].assign(static_cast<std::size_t>(params_[i].tensor.numel()), 0.0f);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step(double lr_scale) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const float lr = static_cast<float>(cfg_.lr * lr_scale);
        const float b1 = static_cast<float>(cfg_.beta1);
        const float b2 = static_cast<float>(cfg_.beta2);
        const float eps = static_cast<float>(cfg_.eps);
        const float ibc1 = static_cast<float>(1.0 / bc1);
        const float ibc2 = static_cast<float>(1.0 / bc2);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            float* x = params_[i].tensor.data();
            const float* g = params_[i].tensor.grad();
            float* m = m_[i].data();
            float* v = v_[i].data();
            const std::size_t n = m_[i].size();
            for (std::size_t k = 0; k < n; ++k) {
                m[k] = b1 * m[k] + (1.0f - b1) * g[k];
                v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
                const float mhat = m[k] * ibc1;
                const float vhat = v[k] * ibc2;
                x[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    std::uint64_t step_count() const { return t_; }
    const std::vector<nn::Parameter>& parameters() const { return params_; }

    void save(Archive& ar, const std::string& prefix) const {
        ar.ints[prefix + "t"] = t_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Shape& s = params_[i].tensor.shape();
            ar.arrays[prefix + params_[i].name + "#m"] = Archive::Array{s, m_[i]};
            ar.arrays[prefix + params_[i].name + "#v"] = Archive::Array{s, v_[i]};
        }
    }

    void load(const Archive& ar, const std::string& prefix) {
        t_ = ar.get_int(prefix + "t");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i] = ar.get_array(prefix + params_[i].name + "#m", params_[i].tensor.shape());
            v_[i] = ar.get_array(prefix + params_[i].name + "#v", params_[i].tensor.shape());
        }
    }

private:
    std::vector<nn::Parameter> params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::uint64_t t_ = 0;
};

/// Constant for the first half of training, then linear decay to zero.
inline double lr_scale_at(std::uint64_t iteration, std::uint64_t max_iterations) {
    if (max_iterations == 0) return 1.0;
    if (iteration >= max_iterations) iteration = max_iterations - 1;
    const std::uint64_t half = max_iterations / 2;
    if (iteration < half) return 1.0;
    return static_cast<double>(max_iterations - iteration) /
           static_cast<double>(max_iterations - half);
}

// ---------------------------------------------------------------------------
// step audit trail
// ---------------------------------------------------------------------------

/// Records which logical data sources each computed loss term consumed, so
/// tests can assert that style references feed only the discriminator loss
/// and that no term ever sees an evaluation target.
struct StepTrace {
    struct TermSources {
        std::string term;
        std::vector<std::string> sources;
    };
    std::vector<TermSources> terms;
    std::vector<std::string> input_paths;
    std::vector<std::string> style_paths;

    const std::vector<std::string>* sources_of(const std::string& term) const {
        for (const auto& t : terms)
            if (t.term == term) return &t.sources;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

inline std::vector<nn::Parameter> trainable_parameters(ModelBundle& bundle) {
    std::vector<nn::Parameter> out;
    bundle.generator.collect_params(out, "g");
    if (bundle.decomposition) bundle.decomposition->collect_params(out, "gl");
    bundle.discriminator.collect_params(out, "d");
    return out;
}

class Trainer {
public:
    explicit Trainer(TrainConfig cfg, const DatasetView* view = nullptr)
        : cfg_(std::move(cfg)), view_(view) {
        cfg_.resolve();
        check_wiring();
        bundle_ = build_models(cfg_.models, cfg_.seed);
        if (cfg_.weights.w_cp > 0) {
            extractor_.emplace(cfg_.extractor);
            bundle_.frozen_aux_params = extractor_->param_count();
            ParamCounts pc = count_params(bundle_);
            bundle_.total_params = pc.total;
            bundle_.trainable_params = pc.trainable;
        }
        bundle_.generator.collect_params(gen_params_, "g");
        if (bundle_.decomposition) bundle_.decomposition->collect_params(gen_params_, "gl");
        bundle_.discriminator.collect_params(disc_params_, "d");
        AdamConfig oc{cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8};
        adam_g_ = AdamOptimizer(gen_params_, oc);
        adam_d_ = AdamOptimizer(disc_params_, oc);
        if (view_) stream_.emplace(*view_, cfg_.seed);
    }

    const TrainConfig& config() const { return cfg_; }
    ModelBundle& models() { return bundle_; }
    const ModelBundle& models() const { return bundle_; }
    const FeatureExtractor& extractor() const {
        require(extractor_.has_value(), "Trainer: no feature extractor configured");
        return *extractor_;
    }
    std::uint64_t iteration() const { return iteration_; }
    const std::vector<nn::Parameter>& generator_parameters() const { return gen_params_; }
    const std::vector<nn::Parameter>& discriminator_parameters() const { return disc_params_; }

    /// Style sampling stream is decoupled from the pair stream: either can be
    /// re-seeded without disturbing the other's draw sequence.
    std::uint64_t style_seed(std::uint64_t iteration) const {
        return mix_seed(mix_seed(cfg_.seed, 0x7374796cULL), iteration);
    }

    /// Loads the batch for the current iteration position and runs one step.
    LossReport step(AccessLog* log = nullptr, StepTrace* trace = nullptr) {
        require(view_ != nullptr, "Trainer::step: constructed without a dataset");
        const std::uint64_t base = iteration_ * static_cast<std::uint64_t>(cfg_.batch_size);
        std::vector<Image> a, b;
        for (int k = 0; k < cfg_.batch_size; ++k) {
            IlluminationPair pair = stream_->at(base + static_cast<std::uint64_t>(k));
            a.push_back(load_input(pair.path_a, log));
            b.push_back(load_input(pair.path_b, log));
            if (trace) {
                trace->input_paths.push_back(pair.path_a.string());
                trace->input_paths.push_back(pair.path_b.string());
            }
        }
        StyleBatch style = sample_style_batch(view_->style, static_cast<std::size_t>(cfg_.batch_size),
                                              style_seed(iteration_), log);
        std::vector<Image> style_images;
        for (std::size_t i = 0; i < style.images.size(); ++i) {
            style_images.push_back(fit(style.images[i]));
            if (trace) trace->style_paths.push_back(style.paths[i].string());
        }
        return train_step(a, b, style_images, trace);
    }

    /// One optimization iteration over an aligned batch triple. Order: siamese
    /// decomposition, shading restyle, recomposition, discriminator update on
    /// detached outputs, then generator-side update scored by the refreshed
    /// discriminator.
    LossReport train_step(const std::vector<Image>& a, const std::vector<Image>& b,
                          const std::vector<Image>& style, StepTrace* trace = nullptr) {
        require(!a.empty() && a.size() == b.size() && a.size() == style.size(),
                "train_step: branch and style batches must have equal size");
        const double scale = lr_scale_at(iteration_, static_cast<std::uint64_t>(cfg_.max_iterations));
        const LossWeights& w = cfg_.weights;

        Tensor ia01 = images_to_batch(a);
        Tensor ib01 = images_to_batch(b);
        Tensor is01 = images_to_batch(style);

        Tensor ra01, sa01, rb01, sb01, out_a01, out_b01;
        if (bundle_.decomposition) {
            std::tie(ra01, sa01) = bundle_.decomposition->forward(to_network(ia01));
            std::tie(rb01, sb01) = bundle_.decomposition->forward(to_network(ib01));
            out_a01 = recompose(ra01, from_network(bundle_.generator.forward(to_network(sa01))));
            out_b01 = recompose(rb01, from_network(bundle_.generator.forward(to_network(sb01))));
        } else {
            out_a01 = from_network(bundle_.generator.forward(to_network(ia01)));
            out_b01 = from_network(bundle_.generator.forward(to_network(ib01)));
        }

        LossReport report;

        {
            std::vector<Tensor> real = bundle_.discriminator.forward(to_network(is01));
            std::vector<Tensor> fake = bundle_.discriminator.forward(to_network(out_a01.detach()));
            std::vector<Tensor> fake_b = bundle_.discriminator.forward(to_network(out_b01.detach()));
            fake.insert(fake.end(), fake_b.begin(), fake_b.end());
            Tensor l_d = loss_gan_discriminator(real, fake);
            ensure_finite("l_d", l_d);
            report.l_d = l_d.item();
            report.total_d = report.l_d;
            adam_d_.zero_grad();
            backward(l_d);
            adam_d_.step(scale);
            if (trace) trace->terms.push_back({"l_d", {"style_real", "branch_restyled_detached"}});
        }

        GeneratorLossTerms terms;
        if (w.w_gan > 0) {
            std::vector<Tensor> fa = bundle_.discriminator.forward(to_network(out_a01));
            std::vector<Tensor> fb = bundle_.discriminator.forward(to_network(out_b01));
            fa.insert(fa.end(), fb.begin(), fb.end());
            terms.gan = loss_gan_generator(fa);
            ensure_finite("l_g", terms.gan);
            if (trace) trace->terms.push_back({"l_g", {"branch_restyled"}});
        }
        if (w.w_os > 0) {
            terms.os = loss_output_similarity(out_a01, out_b01, w);
            ensure_finite("l_os", terms.os);
            if (trace) trace->terms.push_back({"l_os", {"branch_restyled"}});
        }
        if (w.w_cp > 0) {
            terms.cp = add(loss_content(*extractor_, ia01, out_a01),
                           loss_content(*extractor_, ib01, out_b01));
            ensure_finite("l_cp", terms.cp);
            if (trace) trace->terms.push_back({"l_cp", {"train_input", "branch_restyled"}});
        }
        if (w.w_dcp > 0) {
            terms.dcp = add(loss_decomposition(ia01, ra01, sa01),
                            loss_decomposition(ib01, rb01, sb01));
            ensure_finite("l_dcp", terms.dcp);
            if (trace) trace->terms.push_back({"l_dcp", {"train_input", "decomposition"}});
        }
        if (w.w_r > 0) {
            terms.r = loss_reflectance(ra01, rb01);
            ensure_finite("l_r", terms.r);
            if (trace) trace->terms.push_back({"l_r", {"decomposition"}});
        }
        Tensor total = total_generator_loss(terms, w, &report);
        ensure_finite("total_g", total);
        adam_g_.zero_grad();
        backward(total);
        adam_g_.step(scale);

        ++iteration_;
        push_recent(report);
        return report;
    }

    LossReport running_average() const {
        LossReport avg;
        if (recent_.empty()) return avg;
        for (const auto& r : recent_) {
            avg.l_g += r.l_g;
            avg.l_d += r.l_d;
            avg.l_os += r.l_os;
            avg.l_cp += r.l_cp;
            avg.l_r += r.l_r;
            avg.l_dcp += r.l_dcp;
            avg.total_g += r.total_g;
            avg.total_d += r.total_d;
        }
        const double n = static_cast<double>(recent_.size());
        avg.l_g /= n;
        avg.l_d /= n;
        avg.l_os /= n;
        avg.l_cp /= n;
        avg.l_r /= n;
        avg.l_dcp /= n;
        avg.total_g /= n;
        avg.total_d /= n;
        return avg;
    }

    void save_checkpoint(const std::filesystem::path& path) const {
        Archive ar;
        ar.strings["config"] = json(cfg_).dump();
        ar.ints["iteration"] = iteration_;
        for (const auto& p : gen_params_) ar.put_tensor("param/" + p.name, p.tensor);
        for (const auto& p : disc_params_) ar.put_tensor("param/" + p.name, p.tensor);
        adam_g_.save(ar, "opt_g/");
        adam_d_.save(ar, "opt_d/");
        std::vector<float> recent;
        for (const auto& r : recent_)
            for (double x : {r.l_g, r.l_d, r.l_os, r.l_cp, r.l_r, r.l_dcp, r.total_g, r.total_d})
                recent.push_back(static_cast<float>(x));
        ar.arrays["recent_losses"] =
            Archive::Array{Shape{static_cast<int>(recent_.size()), 8}, std::move(recent)};
        ar.save(path);
    }

    void load_checkpoint(const std::filesystem::path& path) {
        Archive ar = Archive::load(path);
        TrainConfig stored;
        json::parse(ar.get_string("config")).get_to(stored);
        stored.resolve();
        if (json(stored.models) != json(cfg_.models) || stored.seed != cfg_.seed)
            throw LoadError("checkpoint: stored model configuration does not match: " +
                            path.string());
        for (auto& p : gen_params_) ar.get_tensor("param/" + p.name, p.tensor);
        for (auto& p : disc_params_) ar.get_tensor("param/" + p.name, p.tensor);
        adam_g_.load(ar, "opt_g/");
        adam_d_.load(ar, "opt_d/");
        iteration_ = ar.get_int("iteration");
        recent_.clear();
        auto it = ar.arrays.find("recent_losses");
        if (it != ar.arrays.end() && it->second.shape.size() == 2 && it->second.shape[1] == 8) {
            const auto& d = it->second.data;
            for (std::size_t i = 0; i + 8 <= d.size(); i += 8) {
                LossReport r;
                r.l_g = d[i];
                r.l_d = d[i + 1];
                r.l_os = d[i + 2];
                r.l_cp = d[i + 3];
                r.l_r = d[i + 4];
                r.l_dcp = d[i + 5];
                r.total_g = d[i + 6];
                r.total_d = d[i + 7];
                recent_.push_back(r);
            }
        }
    }

private:
    void check_wiring() {
        if (cfg_.models.use_decomposition) {
            require(cfg_.models.generator.input_channels == cfg_.models.decomposition.shading_channels &&
                        cfg_.models.generator.output_channels == cfg_.models.decomposition.shading_channels,
                    "Trainer: generator channels must match shading channels");
        } else {
            require(cfg_.models.generator.input_channels == 3 &&
                        cfg_.models.generator.output_channels == 3,
                    "Trainer: direct mode needs a 3-channel generator");
        }
    }

    Image fit(const Image& im) const {
        if (im.height == cfg_.image_height && im.width == cfg_.image_width) return im;
        return resize(im, cfg_.image_height, cfg_.image_width);
    }

    Image load_input(const fs::path& path, AccessLog* log) const {
        return fit(load_image_logged(path, AccessRole::TrainInput, log));
    }

    static void ensure_finite(const char* term, const Tensor& t) {
        if (!all_finite(t))
            throw NonFiniteLossError(term, std::string("train_step: non-finite loss term: ") + term);
    }

    void push_recent(const LossReport& r) {
        recent_.push_back(r);
        if (recent_.size() > 100) recent_.pop_front();
    }

    TrainConfig cfg_;
    const DatasetView* view_ = nullptr;
    ModelBundle bundle_;
    std::optional<FeatureExtractor> extractor_;
    std::vector<nn::Parameter> gen_params_, disc_params_;
    AdamOptimizer adam_g_, adam_d_;
    std::optional<PairStream> stream_;
    std::uint64_t iteration_ = 0;
    std::deque<LossReport> recent_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

inline std::string format_metrics_row(std::uint64_t iteration, const LossReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  static_cast<unsigned long long>(iteration), r.l_g, r.l_d, r.l_os, r.l_cp, r.l_r,
                  r.l_dcp, r.total_g, r.total_d);
    return buf;
}

constexpr const char* kMetricsHeader = "iteration,l_g,l_d,l_os,l_cp,l_r,l_dcp,total_g,total_d";

struct TrainLoopResult {
    std::filesystem::path checkpoint_path;
    std::filesystem::path metrics_path;
    std::uint64_t iterations_run = 0;
};

/// Runs (or resumes, if checkpoint_latest.bin exists in run_dir) training to
/// cfg.max_iterations. Writes the resolved config, a metrics CSV, interval
/// checkpoints, and a final checkpoint_latest.bin.
inline TrainLoopResult train_loop(
    const TrainConfig& cfg_in, const DatasetView& view, const std::filesystem::path& run_dir,
    AccessLog* log = nullptr,
    const std::function<void(const Trainer&, const LossReport&)>& on_step = {}) {
    TrainConfig cfg = cfg_in;
    cfg.resolve();
    std::filesystem::create_directories(run_dir);
    echo_config(cfg, run_dir);
    Trainer trainer(cfg, &view);
    const std::filesystem::path latest = run_dir / "checkpoint_latest.bin";
    const std::filesystem::path metrics = run_dir / "metrics.csv";
    if (std::filesystem::exists(latest)) trainer.load_checkpoint(latest);
    const bool fresh = !std::filesystem::exists(metrics);
    std::ofstream ms(metrics, std::ios::app);
    if (!ms) throw IoError("train_loop: cannot open " + metrics.string());
    if (fresh) ms << kMetricsHeader << "\n";

    TrainLoopResult result{latest, metrics, 0};
    while (trainer.iteration() < static_cast<std::uint64_t>(cfg.max_iterations)) {
        LossReport rep = trainer.step(log);
        ++result.iterations_run;
        const std::uint64_t it = trainer.iteration();
        if (it % static_cast<std::uint64_t>(cfg.metrics_interval) == 0) {
            ms << format_metrics_row(it, rep) << "\n";
            ms.flush();
        }
        if (it % static_cast<std::uint64_t>(cfg.checkpoint_interval) == 0) {
            trainer.save_checkpoint(run_dir / ("checkpoint_iter" + std::to_string(it) + ".bin"));
            trainer.save_checkpoint(latest);
        }
        if (on_step) on_step(trainer, rep);
    }
    trainer.save_checkpoint(latest);
    return result;
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

struct LoadedModels {
    TrainConfig cfg;
    ModelBundle bundle;
    std::uint64_t iteration = 0;
};

/// Rebuilds networks from the checkpoint's embedded config and restores the
/// parameters; optimizer state is left behind.
inline LoadedModels load_models(const std::filesystem::path& path) {
    Archive ar = Archive::load(path);
    LoadedModels lm;
    json::parse(ar.get_string("config")).get_to(lm.cfg);
    lm.cfg.resolve();
    lm.bundle = build_models(lm.cfg.models, lm.cfg.seed);
    auto params = trainable_parameters(lm.bundle);
    for (auto& p : params) ar.get_tensor("param/" + p.name, p.tensor);
    lm.iteration = ar.get_int("iteration");
    return lm;
}

namespace detail {

/// Pads (right/bottom) so both spatial dims are multiples of `multiple`;
/// reflect padding, falling back to edge replication when the image is
/// smaller than the required pad.
inline Tensor pad_to_multiple(const Tensor& x01, int multiple, int* pad_h, int* pad_w) {
    const int h = x01.dim(2), w = x01.dim(3);
    *pad_h = (multiple - h % multiple) % multiple;
    *pad_w = (multiple - w % multiple) % multiple;
    if (*pad_h == 0 && *pad_w == 0) return x01;
    PadMode mode = (*pad_h < h && *pad_w < w) ? PadMode::Reflect : PadMode::Replicate;
    return pad2d(x01, 0, *pad_w, 0, *pad_h, mode);
}

} // namespace detail

/// Pad -> decompose -> restyle shading -> recompose -> crop -> clamp.
/// `decompose` maps a [0,1] input to ([0,1] reflectance, [0,1] shading); an
/// undefined reflectance skips recomposition. `restyle` maps network-domain
/// shading to network-domain shading.
template <typename DecomposeFn, typename RestyleFn>
Image run_restyle_pipeline(const Image& input01, int multiple, DecomposeFn&& decompose,
                           RestyleFn&& restyle) {
    require(input01.channels == 3, "infer: expected a 3-channel image");
    NoGradGuard guard;
    const int h = input01.height, w = input01.width;
    int ph = 0, pw = 0;
    Tensor x01 = detail::pad_to_multiple(image_to_tensor(input01), multiple, &ph, &pw);
    auto [r01, s01] = decompose(x01);
    Tensor s_hat01 = from_network(restyle(to_network(s01)));
    Tensor out01 = r01.defined() ? recompose(r01, s_hat01) : s_hat01;
    if (ph != 0 || pw != 0) out01 = crop2d(out01, 0, 0, h, w);
    return clamp01(tensor_to_image(out01));
}

inline int inference_multiple(const ModelBundle& bundle) {
    int m = bundle.generator.config().stride_product();
    if (bundle.decomposition) m = std::max(m, bundle.decomposition->config().stride_product());
    return m;
}

inline Image infer_image(const ModelBundle& bundle, const Image& input01) {
    if (bundle.decomposition) {
        return run_restyle_pipeline(
            input01, inference_multiple(bundle),
            [&](const Tensor& x01) { return bundle.decomposition->forward(to_network(x01)); },
            [&](const Tensor& s_net) { return bundle.generator.forward(s_net); });
    }
    return run_restyle_pipeline(
        input01, inference_multiple(bundle),
        [&](const Tensor& x01) { return std::pair<Tensor, Tensor>{Tensor{}, x01}; },
        [&](const Tensor& x_net) { return bundle.generator.forward(x_net); });
}

/// Intermediate products of one restyle pass, cropped back to input size.
struct RestyleArtifacts {
    Image reflectance;
    Image shading;
    Image restyled_shading;
    Image output;
};

inline RestyleArtifacts run_restyle_with_artifacts(const ModelBundle& bundle,
                                                   const Image& input01) {
    require(static_cast<bool>(bundle.decomposition),
            "decompose: checkpoint has no decomposition network");
    require(input01.channels == 3, "decompose: expected a 3-channel image");
    NoGradGuard guard;
    const int h = input01.height, w = input01.width;
    int ph = 0, pw = 0;
    Tensor x01 = detail::pad_to_multiple(image_to_tensor(input01), inference_multiple(bundle),
                                         &ph, &pw);
    auto [r01, s01] = bundle.decomposition->forward(to_network(x01));
    Tensor s_hat01 = from_network(bundle.generator.forward(to_network(s01)));
    Tensor out01 = recompose(r01, s_hat01);
    auto finish = [&](const Tensor& t) {
        Tensor c = (ph != 0 || pw != 0) ? crop2d(t, 0, 0, h, w) : t;
        return clamp01(tensor_to_image(c));
    };
    return RestyleArtifacts{finish(r01), finish(s01), finish(s_hat01), finish(out01)};
}

} // namespace relume
