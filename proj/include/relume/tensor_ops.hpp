#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "relume/tensor.hpp"

namespace relume {

enum class PadMode { Zero, Reflect, Replicate };

namespace detail {

// Maps a padded coordinate to a source coordinate, or -1 for zero fill.
inline int pad_src_index(int out, int pad_lo, int n, PadMode mode) {
    int i = out - pad_lo;
    if (i >= 0 && i < n) return i;
    switch (mode) {
    case PadMode::Zero: return -1;
    case PadMode::Replicate: return std::clamp(i, 0, n - 1);
    case PadMode::Reflect:
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    }
    return -1;
}

} // namespace detail

/// 2-d padding on an NCHW tensor. Reflect mode requires pad < dim.
inline Tensor pad2d(const Tensor& x, int left, int right, int top, int bottom, PadMode mode) {
    require(x.ndim() == 4, "pad2d: expected NCHW tensor");
    require(left >= 0 && right >= 0 && top >= 0 && bottom >= 0, "pad2d: negative pad");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (mode == PadMode::Reflect)
        require(left < W && right < W && top < H && bottom < H,
                "pad2d: reflect pad must be smaller than the padded dimension");
    int Ho = H + top + bottom, Wo = W + left + right;

    std::vector<int> ymap(static_cast<std::size_t>(Ho)), xmap(static_cast<std::size_t>(Wo));
    for (int y = 0; y < Ho; ++y) ymap[static_cast<std::size_t>(y)] = detail::pad_src_index(y, top, H, mode);
    for (int x2 = 0; x2 < Wo; ++x2) xmap[static_cast<std::size_t>(x2)] = detail::pad_src_index(x2, left, W, mode);

    std::vector<float> out(static_cast<std::size_t>(N) * C * Ho * Wo, 0.0f);
    const float* in = x.data();
    std::size_t in_plane = static_cast<std::size_t>(H) * W;
    std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * in_plane;
        float* op = out.data() + nc * out_plane;
        for (int y = 0; y < Ho; ++y) {
            int sy = ymap[static_cast<std::size_t>(y)];
            for (int x2 = 0; x2 < Wo; ++x2) {
                int sx = xmap[static_cast<std::size_t>(x2)];
                op[static_cast<std::size_t>(y) * Wo + x2] =
                    (sy >= 0 && sx >= 0) ? ip[static_cast<std::size_t>(sy) * W + sx] : 0.0f;
            }
        }
    }

    auto px = x.node();
    return detail::make_op_result(
        {N, C, Ho, Wo}, std::move(out), {px},
        [px, ymap, xmap, N, C, H, W, Ho, Wo](detail::Node* self) {
            return [self, px, ymap, xmap, N, C, H, W, Ho, Wo]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                std::size_t in_plane = static_cast<std::size_t>(H) * W;
                std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                    float* gp = px->grad.data() + nc * in_plane;
                    const float* og = self->grad.data() + nc * out_plane;
                    for (int y = 0; y < Ho; ++y) {
                        int sy = ymap[static_cast<std::size_t>(y)];
                        if (sy < 0) continue;
                        for (int x2 = 0; x2 < Wo; ++x2) {
                            int sx = xmap[static_cast<std::size_t>(x2)];
                            if (sx < 0) continue;
                            gp[static_cast<std::size_t>(sy) * W + sx] +=
                                og[static_cast<std::size_t>(y) * Wo + x2];
                        }
                    }
                }
            };
        });
}

inline Tensor pad2d(const Tensor& x, int pad, PadMode mode) {
    return pad2d(x, pad, pad, pad, pad, mode);
}

/// Crops rows [top, top+h) and cols [left, left+w).
inline Tensor crop2d(const Tensor& x, int top, int left, int h, int w) {
    require(x.ndim() == 4, "crop2d: expected NCHW tensor");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= H && left + w <= W,
            "crop2d: window out of range");
    std::vector<float> out(static_cast<std::size_t>(N) * C * h * w);
    const float* in = x.data();
    std::size_t in_plane = static_cast<std::size_t>(H) * W;
    std::size_t out_plane = static_cast<std::size_t>(h) * w;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc)
        for (int y = 0; y < h; ++y)
            std::copy_n(in + nc * in_plane + static_cast<std::size_t>(top + y) * W + left, w,
                        out.data() + nc * out_plane + static_cast<std::size_t>(y) * w);

    auto px = x.node();
    return detail::make_op_result(
        {N, C, h, w}, std::move(out), {px}, [px, N, C, H, W, top, left, h, w](detail::Node* self) {
            return [self, px, N, C, H, W, top, left, h, w]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                std::size_t in_plane = static_cast<std::size_t>(H) * W;
                std::size_t out_plane = static_cast<std::size_t>(h) * w;
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc)
                    for (int y = 0; y < h; ++y) {
                        float* gp = px->grad.data() + nc * in_plane +
                                    static_cast<std::size_t>(top + y) * W + left;
                        const float* og = self->grad.data() + nc * out_plane +
                                          static_cast<std::size_t>(y) * w;
                        for (int x2 = 0; x2 < w; ++x2) gp[x2] += og[x2];
                    }
            };
        });
}

/// Concatenates along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.ndim() == 4 && b.ndim() == 4, "concat_channels: expected NCHW tensors");
    require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            "concat_channels: non-channel dims must match");
    int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<float> out(static_cast<std::size_t>(N) * (Ca + Cb) * plane);
    for (int n = 0; n < N; ++n) {
        std::copy_n(a.data() + static_cast<std::size_t>(n) * Ca * plane, static_cast<std::size_t>(Ca) * plane,
                    out.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane);
        std::copy_n(b.data() + static_cast<std::size_t>(n) * Cb * plane, static_cast<std::size_t>(Cb) * plane,
                    out.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane);
    }
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result(
        {N, Ca + Cb, H, W}, std::move(out), {pa, pb}, [pa, pb, N, Ca, Cb, plane](detail::Node* self) {
            return [self, pa, pb, N, Ca, Cb, plane]() {
                for (int n = 0; n < N; ++n) {
                    const float* og = self->grad.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane;
                    if (pa->requires_grad) {
                        pa->ensure_grad();
                        float* ga = pa->grad.data() + static_cast<std::size_t>(n) * Ca * plane;
                        for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * plane; ++i) ga[i] += og[i];
                    }
                    if (pb->requires_grad) {
                        pb->ensure_grad();
                        float* gb = pb->grad.data() + static_cast<std::size_t>(n) * Cb * plane;
                        const float* ogb = og + static_cast<std::size_t>(Ca) * plane;
                        for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * plane; ++i) gb[i] += ogb[i];
                    }
                }
            };
        });
}

/// Average pool over full k×k windows, stride s (partial windows dropped).
inline Tensor avg_pool2d(const Tensor& x, int k = 2, int s = 2) {
    require(x.ndim() == 4, "avg_pool2d: expected NCHW tensor");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H >= k && W >= k, "avg_pool2d: input smaller than window");
    int Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
    std::vector<float> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    const float* in = x.data();
    float inv = 1.0f / static_cast<float>(k * k);
    std::size_t in_plane = static_cast<std::size_t>(H) * W;
    std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * in_plane;
        float* op = out.data() + nc * out_plane;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                float acc = 0.0f;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        acc += ip[static_cast<std::size_t>(oy * s + ky) * W + (ox * s + kx)];
                op[static_cast<std::size_t>(oy) * Wo + ox] = acc * inv;
            }
    }
    auto px = x.node();
    return detail::make_op_result(
        {N, C, Ho, Wo}, std::move(out), {px}, [px, N, C, H, W, Ho, Wo, k, s, inv](detail::Node* self) {
            return [self, px, N, C, H, W, Ho, Wo, k, s, inv]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                std::size_t in_plane = static_cast<std::size_t>(H) * W;
                std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                    float* gp = px->grad.data() + nc * in_plane;
                    const float* og = self->grad.data() + nc * out_plane;
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                            float g = og[static_cast<std::size_t>(oy) * Wo + ox] * inv;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    gp[static_cast<std::size_t>(oy * s + ky) * W + (ox * s + kx)] += g;
                        }
                }
            };
        });
}

/// Max pool over full k×k windows, stride s. Ties break toward the first
/// element in scan order, matching the finite-difference subgradient.
inline Tensor max_pool2d(const Tensor& x, int k = 2, int s = 2) {
    require(x.ndim() == 4, "max_pool2d: expected NCHW tensor");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H >= k && W >= k, "max_pool2d: input smaller than window");
    int Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
    std::vector<float> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    std::vector<std::int32_t> arg(out.size());
    const float* in = x.data();
    std::size_t in_plane = static_cast<std::size_t>(H) * W;
    std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * in_plane;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                std::int32_t best_i = 0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        std::int32_t idx = static_cast<std::int32_t>((oy * s + ky) * W + (ox * s + kx));
                        float v = ip[static_cast<std::size_t>(idx)];
                        if (v > best) { best = v; best_i = idx; }
                    }
                out[nc * out_plane + static_cast<std::size_t>(oy) * Wo + ox] = best;
                arg[nc * out_plane + static_cast<std::size_t>(oy) * Wo + ox] = best_i;
            }
    }
    auto px = x.node();
    return detail::make_op_result(
        {N, C, Ho, Wo}, std::move(out), {px},
        [px, arg = std::move(arg), in_plane, out_plane, N, C](detail::Node* self) {
            return [self, px, arg, in_plane, out_plane, N, C]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                    float* gp = px->grad.data() + nc * in_plane;
                    const float* og = self->grad.data() + nc * out_plane;
                    const std::int32_t* ap = arg.data() + nc * out_plane;
                    for (std::size_t i = 0; i < out_plane; ++i)
                        gp[static_cast<std::size_t>(ap[i])] += og[i];
                }
            };
        });
}

/// Nearest-neighbour 2x upsampling.
inline Tensor upsample_nearest2(const Tensor& x) {
    require(x.ndim() == 4, "upsample_nearest2: expected NCHW tensor");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Ho = 2 * H, Wo = 2 * W;
    std::vector<float> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    const float* in = x.data();
    std::size_t in_plane = static_cast<std::size_t>(H) * W;
    std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * in_plane;
        float* op = out.data() + nc * out_plane;
        for (int y = 0; y < Ho; ++y) {
            const float* row = ip + static_cast<std::size_t>(y / 2) * W;
            float* orow = op + static_cast<std::size_t>(y) * Wo;
            for (int x2 = 0; x2 < Wo; ++x2) orow[x2] = row[x2 / 2];
        }
    }
    auto px = x.node();
    return detail::make_op_result(
        {N, C, Ho, Wo}, std::move(out), {px}, [px, N, C, H, W, Ho, Wo](detail::Node* self) {
            return [self, px, N, C, H, W, Ho, Wo]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                std::size_t in_plane = static_cast<std::size_t>(H) * W;
                std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                    float* gp = px->grad.data() + nc * in_plane;
                    const float* og = self->grad.data() + nc * out_plane;
                    for (int y = 0; y < Ho; ++y)
                        for (int x2 = 0; x2 < Wo; ++x2)
                            gp[static_cast<std::size_t>(y / 2) * W + (x2 / 2)] +=
                                og[static_cast<std::size_t>(y) * Wo + x2];
                }
            };
        });
}

namespace detail {

// Shared forward-difference kernel; axis 0 = x (columns), 1 = y (rows).
inline Tensor diff_axis(const Tensor& x, int axis) {
    require(x.ndim() == 4, "diff: expected NCHW tensor");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<float> out(x.values().size(), 0.0f);
    const float* in = x.data();
    std::size_t plane = static_cast<std::size_t>(H) * W;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * plane;
        float* op = out.data() + nc * plane;
        if (axis == 0) {
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 + 1 < W; ++x2)
                    op[static_cast<std::size_t>(y) * W + x2] =
                        ip[static_cast<std::size_t>(y) * W + x2 + 1] - ip[static_cast<std::size_t>(y) * W + x2];
        } else {
            for (int y = 0; y + 1 < H; ++y)
                for (int x2 = 0; x2 < W; ++x2)
                    op[static_cast<std::size_t>(y) * W + x2] =
                        ip[static_cast<std::size_t>(y + 1) * W + x2] - ip[static_cast<std::size_t>(y) * W + x2];
        }
    }
    auto px = x.node();
    return detail::make_op_result(
        x.shape(), std::move(out), {px}, [px, N, C, H, W, axis, plane](detail::Node* self) {
            return [self, px, N, C, H, W, axis, plane]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                    float* gp = px->grad.data() + nc * plane;
                    const float* og = self->grad.data() + nc * plane;
                    if (axis == 0) {
                        for (int y = 0; y < H; ++y)
                            for (int x2 = 0; x2 + 1 < W; ++x2) {
                                float g = og[static_cast<std::size_t>(y) * W + x2];
                                gp[static_cast<std::size_t>(y) * W + x2 + 1] += g;
                                gp[static_cast<std::size_t>(y) * W + x2] -= g;
                            }
                    } else {
                        for (int y = 0; y + 1 < H; ++y)
                            for (int x2 = 0; x2 < W; ++x2) {
                                float g = og[static_cast<std::size_t>(y) * W + x2];
                                gp[static_cast<std::size_t>(y + 1) * W + x2] += g;
                                gp[static_cast<std::size_t>(y) * W + x2] -= g;
                            }
                    }
                }
            };
        });
}

} // namespace detail

/// Forward difference along columns; last column is zero (replicate edge).
inline Tensor diff_x(const Tensor& x) { return detail::diff_axis(x, 0); }
/// Forward difference along rows; last row is zero (replicate edge).
inline Tensor diff_y(const Tensor& x) { return detail::diff_axis(x, 1); }

/// Per-sample per-channel normalization to zero mean, unit variance.
/// No learnt affine parameters.
inline Tensor instance_norm(const Tensor& x, float eps = 1e-5f) {
    require(x.ndim() == 4, "instance_norm: expected NCHW tensor");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<float> out(x.values().size());
    std::vector<float> istd(static_cast<std::size_t>(N) * C);
    const float* in = x.data();
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += ip[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            double d = ip[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(plane);
        float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        istd[nc] = is;
        float* op = out.data() + nc * plane;
        float mf = static_cast<float>(mean);
        for (std::size_t i = 0; i < plane; ++i) op[i] = (ip[i] - mf) * is;
    }
    auto px = x.node();
    return detail::make_op_result(
        x.shape(), std::move(out), {px},
        [px, istd = std::move(istd), N, C, plane](detail::Node* self) {
            return [self, px, istd, N, C, plane]() {
                if (!px->requires_grad) return;
                px->ensure_grad();
                for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                    const float* og = self->grad.data() + nc * plane;
                    const float* yv = self->value.data() + nc * plane;
                    float* gp = px->grad.data() + nc * plane;
                    double gsum = 0.0, gysum = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        gsum += og[i];
                        gysum += static_cast<double>(og[i]) * yv[i];
                    }
                    float gmean = static_cast<float>(gsum / static_cast<double>(plane));
                    float gymean = static_cast<float>(gysum / static_cast<double>(plane));
                    float is = istd[nc];
                    for (std::size_t i = 0; i < plane; ++i)
                        gp[i] += is * (og[i] - gmean - yv[i] * gymean);
                }
            };
        });
}

/// Elementwise product where `b` has a single channel broadcast over `a`'s.
inline Tensor mul_broadcast_channel(const Tensor& a, const Tensor& b) {
    require(a.ndim() == 4 && b.ndim() == 4, "mul_broadcast_channel: expected NCHW tensors");
    require(b.dim(1) == 1 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            "mul_broadcast_channel: b must be [N,1,H,W] matching a");
    int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<float> out(a.values());
    for (int n = 0; n < N; ++n) {
        const float* bp = b.data() + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < C; ++c) {
            float* op = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) op[i] *= bp[i];
        }
    }
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result(
        a.shape(), std::move(out), {pa, pb}, [pa, pb, N, C, plane](detail::Node* self) {
            return [self, pa, pb, N, C, plane]() {
                for (int n = 0; n < N; ++n) {
                    const float* bp = pb->value.data() + static_cast<std::size_t>(n) * plane;
                    if (pa->requires_grad) {
                        pa->ensure_grad();
                        for (int c = 0; c < C; ++c) {
                            float* ga = pa->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                            const float* og = self->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) ga[i] += og[i] * bp[i];
                        }
                    }
                    if (pb->requires_grad) {
                        pb->ensure_grad();
                        float* gb = pb->grad.data() + static_cast<std::size_t>(n) * plane;
                        for (int c = 0; c < C; ++c) {
                            const float* ap = pa->value.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                            const float* og = self->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) gb[i] += og[i] * ap[i];
                        }
                    }
                }
            };
        });
}

/// Elementwise product with optional single-channel broadcast of `s`.
inline Tensor recompose(const Tensor& r, const Tensor& s) {
    if (r.shape() == s.shape()) return mul(r, s);
    return mul_broadcast_channel(r, s);
}

} // namespace relume
