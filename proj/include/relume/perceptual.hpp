#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "relume/nn.hpp"

namespace relume {

enum class ExtractorKind {
    PretrainedDeepFeatures, // 19-layer conv stack topology, loadable weights
    FixedRandomPyramid,     // seeded frozen conv pyramid, no weight file needed
};

struct FeatureExtractorConfig {
    ExtractorKind kind = ExtractorKind::FixedRandomPyramid;
    std::string weights_path; // deep-features kind; empty keeps seeded init
    std::uint64_t seed = 17;

    static constexpr std::array<float, 5> stage_weights{1.0f / 32, 1.0f / 16, 1.0f / 8, 1.0f / 4,
                                                        1.0f};
};

/// Frozen 5-stage feature pyramid used by the content loss. Gradients flow
/// through to the image input but never into extractor parameters.
class FeatureExtractor {
public:
    FeatureExtractor() = default;

    explicit FeatureExtractor(const FeatureExtractorConfig& cfg) : cfg_(cfg) {
        Rng rng(cfg.seed);
        if (cfg.kind == ExtractorKind::PretrainedDeepFeatures) {
            build_deep(rng);
            if (!cfg.weights_path.empty()) load_weights(cfg.weights_path);
        } else {
            build_pyramid(rng);
        }
        for (auto& l : layers_) {
            l.conv.w.set_requires_grad(false);
            l.conv.b.set_requires_grad(false);
        }
    }

    ExtractorKind kind() const { return cfg_.kind; }
    const FeatureExtractorConfig& config() const { return cfg_; }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& l : layers_) n += l.conv.param_count();
        return n;
    }

    /// Input in [0,1]; returns the five tapped stage activations.
    std::vector<Tensor> forward(const Tensor& x01) const {
        require(x01.ndim() == 4 && x01.dim(1) == 3, "FeatureExtractor: expected NCHW RGB input");
        Tensor h = normalize_input(x01);
        std::vector<Tensor> taps;
        for (const auto& l : layers_) {
            if (l.pool_before) h = pool(h);
            h = l.conv.forward(h);
            h = cfg_.kind == ExtractorKind::PretrainedDeepFeatures ? relu(h) : leaky_relu(h, 0.2f);
            if (l.tap) taps.push_back(cfg_.kind == ExtractorKind::FixedRandomPyramid
                                          ? instance_norm(h)
                                          : h);
        }
        return taps;
    }

    /// Tagged binary blob holding every conv weight/bias in layer order.
    void load_weights(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("FeatureExtractor: cannot open weights file: " + path);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::string(magic, 4) != "RLFX")
            throw LoadError("FeatureExtractor: bad magic in " + path);
        std::uint32_t version = 0, count = 0;
        read_u32(is, version, path);
        read_u32(is, count, path);
        if (version != 1) throw LoadError("FeatureExtractor: unsupported version in " + path);
        if (count != layers_.size() * 2)
            throw LoadError("FeatureExtractor: tensor count mismatch in " + path);
        for (auto& l : layers_) {
            read_tensor(is, l.conv.w, path);
            read_tensor(is, l.conv.b, path);
        }
    }

    void save_weights(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("FeatureExtractor: cannot write weights file: " + path);
        os.write("RLFX", 4);
        write_u32(os, 1);
        write_u32(os, static_cast<std::uint32_t>(layers_.size() * 2));
        for (const auto& l : layers_) {
            write_tensor(os, l.conv.w);
            write_tensor(os, l.conv.b);
        }
        if (!os) throw IoError("FeatureExtractor: short write to " + path);
    }

private:
    struct Layer {
        nn::Conv2dLayer conv;
        bool tap = false;
        bool pool_before = false;
    };

    // Standard 19-layer topology through the fifth stage's first conv; taps
    // after the first activation of each stage; max-pool between stages.
    void build_deep(Rng& rng) {
        const int stage_convs[5] = {2, 2, 4, 4, 1};
        const int stage_ch[5] = {64, 128, 256, 512, 512};
        int c_in = 3;
        for (int s = 0; s < 5; ++s) {
            for (int i = 0; i < stage_convs[s]; ++i) {
                Layer l;
                l.conv = nn::Conv2dLayer(c_in, stage_ch[s], 3, 1, 1, PadMode::Zero, rng);
                l.pool_before = (s > 0 && i == 0);
                l.tap = (i == 0);
                layers_.push_back(std::move(l));
                c_in = stage_ch[s];
            }
        }
        // He-style scaling keeps untrained activations bounded.
        rescale_weights();
    }

    void build_pyramid(Rng& rng) {
        const int stage_ch[5] = {16, 32, 64, 96, 128};
        int c_in = 3;
        for (int s = 0; s < 5; ++s) {
            Layer l;
            l.conv = nn::Conv2dLayer(c_in, stage_ch[s], 3, 1, 1, PadMode::Zero, rng);
            l.pool_before = (s > 0);
            l.tap = true;
            layers_.push_back(std::move(l));
            c_in = stage_ch[s];
        }
        rescale_weights();
    }

    void rescale_weights() {
        for (auto& l : layers_) {
            int fan_in = l.conv.w.dim(1) * l.conv.w.dim(2) * l.conv.w.dim(3);
            float s = std::sqrt(2.0f / static_cast<float>(fan_in)) / 0.02f;
            for (float& v : l.conv.w.values()) v *= s;
        }
    }

    Tensor pool(const Tensor& h) const {
        return cfg_.kind == ExtractorKind::PretrainedDeepFeatures ? max_pool2d(h, 2, 2)
                                                                  : avg_pool2d(h, 2, 2);
    }

    // Deep kind standardizes with the usual pretrained-input statistics;
    // the pyramid maps to [-1,1] like the other conv stacks.
    Tensor normalize_input(const Tensor& x01) const {
        if (cfg_.kind == ExtractorKind::FixedRandomPyramid) return to_network(x01);
        static constexpr float mean[3] = {0.485f, 0.456f, 0.406f};
        static constexpr float stdev[3] = {0.229f, 0.224f, 0.225f};
        int N = x01.dim(0), C = 3, H = x01.dim(2), W = x01.dim(3);
        std::vector<float> out(x01.values());
        std::size_t plane = static_cast<std::size_t>(H) * W;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float inv = 1.0f / stdev[c];
                float* p = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean[c]) * inv;
            }
        auto px = x01.node();
        return detail::make_op_result(
            x01.shape(), std::move(out), {px}, [px, N, C, plane](detail::Node* self) {
                return [self, px, N, C, plane]() {
                    if (!px->requires_grad) return;
                    px->ensure_grad();
                    static constexpr float stdev[3] = {0.229f, 0.224f, 0.225f};
                    for (int n = 0; n < N; ++n)
                        for (int c = 0; c < C; ++c) {
                            float inv = 1.0f / stdev[c];
                            float* gp = px->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                            const float* og =
                                self->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) gp[i] += og[i] * inv;
                        }
                };
            });
    }

    static void read_u32(std::istream& is, std::uint32_t& v, const std::string& path) {
        is.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!is) throw LoadError("FeatureExtractor: truncated file: " + path);
    }
    static void write_u32(std::ostream& os, std::uint32_t v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    static void read_tensor(std::istream& is, Tensor& t, const std::string& path) {
        std::uint32_t nd = 0;
        read_u32(is, nd, path);
        if (nd != static_cast<std::uint32_t>(t.ndim()))
            throw LoadError("FeatureExtractor: rank mismatch in " + path);
        for (int i = 0; i < t.ndim(); ++i) {
            std::uint32_t d = 0;
            read_u32(is, d, path);
            if (d != static_cast<std::uint32_t>(t.dim(i)))
                throw LoadError("FeatureExtractor: shape mismatch in " + path);
        }
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
        if (!is) throw LoadError("FeatureExtractor: truncated tensor data in " + path);
    }
    static void write_tensor(std::ostream& os, const Tensor& t) {
        write_u32(os, static_cast<std::uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * 4));
    }

    FeatureExtractorConfig cfg_;
    std::vector<Layer> layers_;
};

} // namespace relume
