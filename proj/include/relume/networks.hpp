#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relume/nn.hpp"

namespace relume {

/// One conv layer's contribution to the FLOP estimate.
struct ConvFlopEntry {
    int k, c_in, c_out, h_out, w_out;
    double ops() const {
        return 2.0 * k * k * static_cast<double>(c_in) * c_out * static_cast<double>(h_out) * w_out;
    }
};

// ---------------------------------------------------------------------------
// restyling generator: front conv, strided downsampling, residual trunk,
// transposed-conv upsampling, tanh tail
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    int base_channels = 64;
    int n_downsample = 3;
    int n_resblocks = 9;
    int n_upsample = 3;
    int input_channels = 3;
    int output_channels = 3;

    void validate() const {
        require(base_channels >= 1 && input_channels >= 1 && output_channels >= 1,
                "GeneratorConfig: channel counts must be >= 1");
        require(n_downsample >= 0 && n_resblocks >= 0, "GeneratorConfig: negative depth");
        require(n_downsample == n_upsample,
                "GeneratorConfig: n_downsample must equal n_upsample");
    }
    int stride_product() const { return 1 << n_downsample; }
};

class Generator {
public:
    Generator() = default;
    Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        int b = cfg.base_channels;
        front_ = nn::Conv2dLayer(cfg.input_channels, b, 7, 1, 3, PadMode::Reflect, rng);
        int c = b;
        for (int i = 0; i < cfg.n_downsample; ++i) {
            down_.emplace_back(c, 2 * c, 3, 2, 1, PadMode::Zero, rng);
            c *= 2;
        }
        for (int i = 0; i < cfg.n_resblocks; ++i) blocks_.emplace_back(c, rng);
        for (int i = 0; i < cfg.n_upsample; ++i) {
            up_.emplace_back(c, c / 2, 3, 2, 1, 1, rng);
            c /= 2;
        }
        tail_ = nn::Conv2dLayer(c, cfg.output_channels, 7, 1, 3, PadMode::Reflect, rng);
    }

    const GeneratorConfig& config() const { return cfg_; }

    /// Network-domain input -> network-domain output (tanh), same shape.
    Tensor forward(const Tensor& x) const {
        require(x.ndim() == 4 && x.dim(1) == cfg_.input_channels,
                "Generator: input must be NCHW with " + std::to_string(cfg_.input_channels) +
                    " channels");
        int sp = cfg_.stride_product();
        require(x.dim(2) % sp == 0 && x.dim(3) % sp == 0,
                "Generator: spatial dims must be divisible by " + std::to_string(sp));
        Tensor h = relu(instance_norm(front_.forward(x)));
        for (const auto& d : down_) h = relu(instance_norm(d.forward(h)));
        for (const auto& blk : blocks_) h = blk.forward(h);
        for (const auto& u : up_) h = relu(instance_norm(u.forward(h)));
        return tanh_act(tail_.forward(h));
    }

    std::int64_t param_count() const {
        std::int64_t n = front_.param_count() + tail_.param_count();
        for (const auto& d : down_) n += d.param_count();
        for (const auto& blk : blocks_) n += blk.param_count();
        for (const auto& u : up_) n += u.param_count();
        return n;
    }

    void collect_params(std::vector<nn::Parameter>& out, const std::string& prefix) {
        front_.collect_params(out, prefix + ".front");
        for (std::size_t i = 0; i < down_.size(); ++i)
            down_[i].collect_params(out, prefix + ".down" + std::to_string(i));
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect_params(out, prefix + ".res" + std::to_string(i));
        for (std::size_t i = 0; i < up_.size(); ++i)
            up_[i].collect_params(out, prefix + ".up" + std::to_string(i));
        tail_.collect_params(out, prefix + ".tail");
    }

    void append_flop_layers(std::vector<ConvFlopEntry>& out, int h, int w) const {
        int b = cfg_.base_channels;
        out.push_back({7, cfg_.input_channels, b, h, w});
        int c = b, hh = h, ww = w;
        for (int i = 0; i < cfg_.n_downsample; ++i) {
            hh /= 2;
            ww /= 2;
            out.push_back({3, c, 2 * c, hh, ww});
            c *= 2;
        }
        for (int i = 0; i < cfg_.n_resblocks; ++i) {
            out.push_back({3, c, c, hh, ww});
            out.push_back({3, c, c, hh, ww});
        }
        for (int i = 0; i < cfg_.n_upsample; ++i) {
            hh *= 2;
            ww *= 2;
            out.push_back({3, c, c / 2, hh, ww});
            c /= 2;
        }
        out.push_back({7, c, cfg_.output_channels, hh, ww});
    }

private:
    GeneratorConfig cfg_;
    nn::Conv2dLayer front_, tail_;
    std::vector<nn::Conv2dLayer> down_;
    std::vector<nn::ResBlock> blocks_;
    std::vector<nn::ConvTranspose2dLayer> up_;
};

// ---------------------------------------------------------------------------
// decomposition network: shared U-Net encoder, two mirrored decoder heads
// producing reflectance and shading in [0,1]
// ---------------------------------------------------------------------------

struct DecompositionConfig {
    int base_channels = 64;
    int depth = 3; // number of downsampling levels; stride product 2^depth
    int input_channels = 3;
    int shading_channels = 3; // 1 (mono) or 3 (colour)

    void validate() const {
        require(base_channels >= 1 && input_channels >= 1, "DecompositionConfig: channels must be >= 1");
        require(depth >= 1, "DecompositionConfig: depth must be >= 1");
        require(shading_channels == 1 || shading_channels == 3,
                "DecompositionConfig: shading_channels must be 1 or 3");
    }
    int stride_product() const { return 1 << depth; }
    int level_channels(int level) const {
        return std::min(base_channels << level, base_channels * 8);
    }
};

class DecompositionNet {
public:
    DecompositionNet() = default;
    DecompositionNet(const DecompositionConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        stem_ = nn::Conv2dLayer(cfg.input_channels, cfg.level_channels(0), 3, 1, 1, PadMode::Zero, rng);
        for (int i = 1; i <= cfg.depth; ++i) {
            enc_down_.emplace_back(cfg.level_channels(i - 1), cfg.level_channels(i), 3, 2, 1,
                                   PadMode::Zero, rng);
            enc_refine_.emplace_back(cfg.level_channels(i), cfg.level_channels(i), 3, 1, 1,
                                     PadMode::Zero, rng);
        }
        build_head(head_r_, 3, rng);
        build_head(head_s_, cfg.shading_channels, rng);
    }

    const DecompositionConfig& config() const { return cfg_; }

    /// Network-domain input -> (reflectance, shading), both in [0,1].
    std::pair<Tensor, Tensor> forward(const Tensor& x) const {
        require(x.ndim() == 4 && x.dim(1) == cfg_.input_channels,
                "DecompositionNet: input must be NCHW with " +
                    std::to_string(cfg_.input_channels) + " channels");
        int sp = cfg_.stride_product();
        require(x.dim(2) % sp == 0 && x.dim(3) % sp == 0,
                "DecompositionNet: spatial dims must be divisible by " + std::to_string(sp));
        std::vector<Tensor> skips;
        Tensor h = relu(instance_norm(stem_.forward(x)));
        skips.push_back(h);
        for (int i = 0; i < cfg_.depth; ++i) {
            h = relu(instance_norm(enc_down_[static_cast<std::size_t>(i)].forward(h)));
            h = relu(instance_norm(enc_refine_[static_cast<std::size_t>(i)].forward(h)));
            skips.push_back(h);
        }
        Tensor r = run_head(head_r_, skips);
        Tensor s = run_head(head_s_, skips);
        return {r, s};
    }

    std::int64_t param_count() const {
        std::int64_t n = stem_.param_count();
        for (const auto& l : enc_down_) n += l.param_count();
        for (const auto& l : enc_refine_) n += l.param_count();
        n += head_params(head_r_);
        n += head_params(head_s_);
        return n;
    }

    void collect_params(std::vector<nn::Parameter>& out, const std::string& prefix) {
        stem_.collect_params(out, prefix + ".stem");
        for (std::size_t i = 0; i < enc_down_.size(); ++i) {
            enc_down_[i].collect_params(out, prefix + ".enc" + std::to_string(i + 1) + ".down");
            enc_refine_[i].collect_params(out, prefix + ".enc" + std::to_string(i + 1) + ".refine");
        }
        collect_head(head_r_, out, prefix + ".rhead");
        collect_head(head_s_, out, prefix + ".shead");
    }

    void append_flop_layers(std::vector<ConvFlopEntry>& out, int h, int w) const {
        out.push_back({3, cfg_.input_channels, cfg_.level_channels(0), h, w});
        int hh = h, ww = w;
        for (int i = 1; i <= cfg_.depth; ++i) {
            hh /= 2;
            ww /= 2;
            out.push_back({3, cfg_.level_channels(i - 1), cfg_.level_channels(i), hh, ww});
            out.push_back({3, cfg_.level_channels(i), cfg_.level_channels(i), hh, ww});
        }
        for (int head = 0; head < 2; ++head) {
            int hh2 = hh, ww2 = ww;
            for (int i = cfg_.depth; i >= 1; --i) {
                hh2 *= 2;
                ww2 *= 2;
                out.push_back({3, cfg_.level_channels(i), cfg_.level_channels(i - 1), hh2, ww2});
                out.push_back({3, 2 * cfg_.level_channels(i - 1), cfg_.level_channels(i - 1), hh2, ww2});
            }
            out.push_back({3, cfg_.level_channels(0), head == 0 ? 3 : cfg_.shading_channels, hh2, ww2});
        }
    }

private:
    struct Head {
        std::vector<nn::Conv2dLayer> up;    // conv after 2x nearest upsample
        std::vector<nn::Conv2dLayer> merge; // conv after skip concat
        nn::Conv2dLayer out;
    };

    void build_head(Head& head, int out_channels, Rng& rng) {
        for (int i = cfg_.depth; i >= 1; --i) {
            head.up.emplace_back(cfg_.level_channels(i), cfg_.level_channels(i - 1), 3, 1, 1,
                                 PadMode::Zero, rng);
            head.merge.emplace_back(2 * cfg_.level_channels(i - 1), cfg_.level_channels(i - 1), 3, 1,
                                    1, PadMode::Zero, rng);
        }
        head.out = nn::Conv2dLayer(cfg_.level_channels(0), out_channels, 3, 1, 1, PadMode::Zero, rng);
    }

    Tensor run_head(const Head& head, const std::vector<Tensor>& skips) const {
        Tensor h = skips.back();
        for (int i = 0; i < cfg_.depth; ++i) {
            h = relu(instance_norm(head.up[static_cast<std::size_t>(i)].forward(upsample_nearest2(h))));
            const Tensor& skip = skips[static_cast<std::size_t>(cfg_.depth - 1 - i)];
            h = relu(instance_norm(head.merge[static_cast<std::size_t>(i)].forward(
                concat_channels(h, skip))));
        }
        return sigmoid_act(head.out.forward(h));
    }

    static std::int64_t head_params(const Head& head) {
        std::int64_t n = head.out.param_count();
        for (const auto& l : head.up) n += l.param_count();
        for (const auto& l : head.merge) n += l.param_count();
        return n;
    }

    void collect_head(Head& head, std::vector<nn::Parameter>& out, const std::string& prefix) {
        for (std::size_t i = 0; i < head.up.size(); ++i) {
            head.up[i].collect_params(out, prefix + ".up" + std::to_string(i));
            head.merge[i].collect_params(out, prefix + ".merge" + std::to_string(i));
        }
        head.out.collect_params(out, prefix + ".out");
    }

    DecompositionConfig cfg_;
    nn::Conv2dLayer stem_;
    std::vector<nn::Conv2dLayer> enc_down_, enc_refine_;
    Head head_r_, head_s_;
};

// ---------------------------------------------------------------------------
// multi-scale patch discriminator: identical conv stacks applied to the
// image at successively halved resolutions; raw (unbounded) score maps
// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
    int n_scales = 2;
    int layers_per_scale = 4;
    int base_channels = 64;
    int input_channels = 3;

    void validate() const {
        require(n_scales >= 1 && layers_per_scale >= 1, "DiscriminatorConfig: counts must be >= 1");
        require(base_channels >= 1 && input_channels >= 1,
                "DiscriminatorConfig: channels must be >= 1");
    }
    int layer_channels(int layer) const {
        return std::min(base_channels << layer, base_channels * 8);
    }
};

class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        for (int s = 0; s < cfg.n_scales; ++s) {
            Scale sc;
            int c = cfg.input_channels;
            for (int l = 0; l < cfg.layers_per_scale; ++l) {
                int co = cfg.layer_channels(l);
                int stride = l + 1 < cfg.layers_per_scale ? 2 : 1;
                sc.layers.emplace_back(c, co, 4, stride, 1, PadMode::Zero, rng);
                c = co;
            }
            sc.out = nn::Conv2dLayer(c, 1, 4, 1, 1, PadMode::Zero, rng);
            scales_.push_back(std::move(sc));
        }
    }

    const DiscriminatorConfig& config() const { return cfg_; }

    /// One raw patch score map per scale; scale k runs on the input halved
    /// k times by average pooling (scale 0 sees full resolution).
    std::vector<Tensor> forward(const Tensor& x) const {
        require(x.ndim() == 4 && x.dim(1) == cfg_.input_channels,
                "Discriminator: input must be NCHW with " +
                    std::to_string(cfg_.input_channels) + " channels");
        std::vector<Tensor> maps;
        Tensor cur = x;
        for (std::size_t s = 0; s < scales_.size(); ++s) {
            if (s > 0) cur = avg_pool2d(cur, 2, 2);
            Tensor h = cur;
            for (std::size_t l = 0; l < scales_[s].layers.size(); ++l) {
                h = scales_[s].layers[l].forward(h);
                if (l > 0) h = instance_norm(h);
                h = leaky_relu(h, 0.2f);
            }
            maps.push_back(scales_[s].out.forward(h));
        }
        return maps;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& sc : scales_) {
            n += sc.out.param_count();
            for (const auto& l : sc.layers) n += l.param_count();
        }
        return n;
    }

    void collect_params(std::vector<nn::Parameter>& out, const std::string& prefix) {
        for (std::size_t s = 0; s < scales_.size(); ++s) {
            for (std::size_t l = 0; l < scales_[s].layers.size(); ++l)
                scales_[s].layers[l].collect_params(
                    out, prefix + ".scale" + std::to_string(s) + ".l" + std::to_string(l));
            scales_[s].out.collect_params(out, prefix + ".scale" + std::to_string(s) + ".out");
        }
    }

private:
    struct Scale {
        std::vector<nn::Conv2dLayer> layers;
        nn::Conv2dLayer out;
    };
    DiscriminatorConfig cfg_;
    std::vector<Scale> scales_;
};

// ---------------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------------

struct ModelsConfig {
    GeneratorConfig generator;
    DecompositionConfig decomposition;
    DiscriminatorConfig discriminator;
    bool use_decomposition = true;
};

struct ParamCounts {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
};

struct ModelBundle {
    ModelsConfig cfg;
    Generator generator;
    std::optional<DecompositionNet> decomposition;
    Discriminator discriminator;
    // Frozen feature-extractor weights; counted as non-trainable.
    std::int64_t frozen_aux_params = 0;
    std::int64_t total_params = 0;
    std::int64_t trainable_params = 0;
};

inline ParamCounts count_params(const ModelBundle& bundle) {
    ParamCounts pc;
    pc.trainable = bundle.generator.param_count() + bundle.discriminator.param_count();
    if (bundle.decomposition) pc.trainable += bundle.decomposition->param_count();
    pc.total = pc.trainable + bundle.frozen_aux_params;
    return pc;
}

/// Deterministic bundle construction; per-network seeds are derived so one
/// network's size does not perturb another's init stream.
inline ModelBundle build_models(const ModelsConfig& cfg, std::uint64_t seed) {
    ModelBundle bundle;
    bundle.cfg = cfg;
    if (cfg.use_decomposition) {
        Rng rng(mix_seed(seed, 1));
        bundle.decomposition.emplace(cfg.decomposition, rng);
    }
    {
        Rng rng(mix_seed(seed, 2));
        bundle.generator = Generator(cfg.generator, rng);
    }
    {
        Rng rng(mix_seed(seed, 3));
        bundle.discriminator = Discriminator(cfg.discriminator, rng);
    }
    ParamCounts pc = count_params(bundle);
    bundle.total_params = pc.total;
    bundle.trainable_params = pc.trainable;
    return bundle;
}

/// Conv multiply-adds (x2) for one inference forward: decomposition + restyle
/// generator + recomposition product.
inline double estimate_gflops(const ModelBundle& bundle, int h, int w) {
    require(h >= 8 && w >= 8 && h % 8 == 0 && w % 8 == 0,
            "estimate_gflops: dims must be positive multiples of 8");
    std::vector<ConvFlopEntry> layers;
    if (bundle.decomposition) bundle.decomposition->append_flop_layers(layers, h, w);
    bundle.generator.append_flop_layers(layers, h, w);
    double ops = 0.0;
    for (const auto& e : layers) ops += e.ops();
    ops += 2.0 * 3.0 * h * w; // recomposition hadamard product
    return ops / 1e9;
}

} // namespace relume
