#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "relume/common.hpp"

namespace relume {

/// Dense float image, channels-last (y, x, c). Values are in [0, 1] at the
/// I/O boundary and in [-1, 1] inside the network domain; the conversion is
/// the affine map x -> 2x - 1, applied exactly once each way.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c) {
        require(h >= 1 && w >= 1 && c >= 1, "Image: dims must be positive");
        data.assign(static_cast<std::size_t>(h) * w * c, fill);
    }

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

struct GradientPair {
    Image dx;
    Image dy;
};

/// Elementwise product. `s` may be single-channel, in which case it is
/// broadcast across the channels of `r`.
inline Image hadamard(const Image& r, const Image& s) {
    require(!r.empty() && !s.empty(), "hadamard: empty image");
    require(r.height == s.height && r.width == s.width,
            "hadamard: spatial shape mismatch");
    if (r.channels == s.channels) {
        Image out = r;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= s.data[i];
        return out;
    }
    if (s.channels == 1) {
        Image out = r;
        std::size_t pixels = static_cast<std::size_t>(r.height) * r.width;
        for (std::size_t p = 0; p < pixels; ++p) {
            float sv = s.data[p];
            for (int c = 0; c < r.channels; ++c) out.data[p * r.channels + c] *= sv;
        }
        return out;
    }
    throw InvalidArgumentError("hadamard: channel counts not broadcastable");
}

/// Forward differences per channel with replicate padding, so the last
/// column of dx and the last row of dy are exactly zero.
inline GradientPair spatial_gradient(const Image& img) {
    require(!img.empty(), "spatial_gradient: empty image");
    GradientPair g;
    g.dx = Image(img.height, img.width, img.channels, 0.0f);
    g.dy = Image(img.height, img.width, img.channels, 0.0f);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                if (x + 1 < img.width)
                    g.dx.at(y, x, c) = img.at(y, x + 1, c) - img.at(y, x, c);
                if (y + 1 < img.height)
                    g.dy.at(y, x, c) = img.at(y + 1, x, c) - img.at(y, x, c);
            }
        }
    }
    return g;
}

/// Bilinear resize with half-pixel centers. Resizing to the source shape is
/// an exact identity.
inline Image resize(const Image& img, int h, int w) {
    require(!img.empty(), "resize: empty image");
    require(h >= 1 && w >= 1, "resize: target dims must be positive");
    if (h == img.height && w == img.width) return img;
    Image out(h, w, img.channels);
    const double sy = static_cast<double>(img.height) / h;
    const double sx = static_cast<double>(img.width) / w;
    for (int y = 0; y < h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        int y0 = static_cast<int>(std::floor(fy));
        int y1 = std::min(y0 + 1, img.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            int x0 = static_cast<int>(std::floor(fx));
            int x1 = std::min(x0 + 1, img.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
                double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

inline Image to_network_domain(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = 2.0f * v - 1.0f;
    return out;
}

inline Image from_network_domain(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = 0.5f * (v + 1.0f);
    return out;
}

inline Image clamp01(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

inline bool dims_divisible_by(const Image& img, int n) {
    return img.height % n == 0 && img.width % n == 0;
}

inline double mean_abs_diff(const Image& a, const Image& b) {
    require(a.same_shape(b), "mean_abs_diff: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        acc += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    return acc / static_cast<double>(a.data.size());
}

inline double max_abs_diff(const Image& a, const Image& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

} // namespace relume
