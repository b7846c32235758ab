#pragma once

#include <string>
#include <vector>

#include "relume/conv.hpp"
#include "relume/random.hpp"
#include "relume/tensor.hpp"
#include "relume/tensor_ops.hpp"

namespace relume::nn {

/// Named parameter handle; the tensor shares storage with the owning layer.
struct Parameter {
    std::string name;
    Tensor tensor;
};

namespace detail {

// Conv weight init: normal(0, 0.02), zero biases.
inline Tensor init_conv_weight(Shape shape, Rng& rng) {
    Tensor w = Tensor::zeros(shape, true);
    for (float& v : w.values()) v = 0.02f * static_cast<float>(rng.normal());
    return w;
}

} // namespace detail

/// Convolution with explicit padding mode baked in.
struct Conv2dLayer {
    Tensor w, b;
    int stride = 1;
    int pad = 0;
    PadMode pad_mode = PadMode::Zero;

    Conv2dLayer() = default;
    Conv2dLayer(int c_in, int c_out, int k, int stride_, int pad_, PadMode mode, Rng& rng)
        : stride(stride_), pad(pad_), pad_mode(mode) {
        require(c_in >= 1 && c_out >= 1 && k >= 1, "Conv2dLayer: channel/kernel counts must be >= 1");
        w = detail::init_conv_weight({c_out, c_in, k, k}, rng);
        b = Tensor::zeros({c_out}, true);
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = pad > 0 ? pad2d(x, pad, pad_mode) : x;
        return conv2d(h, w, b, stride);
    }

    std::int64_t param_count() const { return w.numel() + b.numel(); }

    void collect_params(std::vector<Parameter>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct ConvTranspose2dLayer {
    Tensor w, b;
    int stride = 2;
    int pad = 1;
    int output_pad = 1;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(int c_in, int c_out, int k, int stride_, int pad_, int output_pad_, Rng& rng)
        : stride(stride_), pad(pad_), output_pad(output_pad_) {
        require(c_in >= 1 && c_out >= 1 && k >= 1,
                "ConvTranspose2dLayer: channel/kernel counts must be >= 1");
        w = detail::init_conv_weight({c_out, c_in, k, k}, rng);
        b = Tensor::zeros({c_out}, true);
    }

    Tensor forward(const Tensor& x) const { return conv_transpose2d(x, w, b, stride, pad, output_pad); }

    std::int64_t param_count() const { return w.numel() + b.numel(); }

    void collect_params(std::vector<Parameter>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

/// conv-norm-relu, conv-norm, additive skip.
struct ResBlock {
    Conv2dLayer c1, c2;

    ResBlock() = default;
    ResBlock(int channels, Rng& rng)
        : c1(channels, channels, 3, 1, 1, PadMode::Reflect, rng),
          c2(channels, channels, 3, 1, 1, PadMode::Reflect, rng) {}

    Tensor forward(const Tensor& x) const {
        Tensor h = relu(instance_norm(c1.forward(x)));
        h = instance_norm(c2.forward(h));
        return add(x, h);
    }

    std::int64_t param_count() const { return c1.param_count() + c2.param_count(); }

    void collect_params(std::vector<Parameter>& out, const std::string& prefix) {
        c1.collect_params(out, prefix + ".c1");
        c2.collect_params(out, prefix + ".c2");
    }
};

} // namespace relume::nn
