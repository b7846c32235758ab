#pragma once

#include <cstddef>
#include <vector>

#include <cblas.h>

#include "relume/tensor.hpp"

extern "C" void openblas_set_num_threads(int);

namespace relume {
namespace detail {

// Single BLAS thread: deterministic reductions and no oversubscription on
// single-core hosts.
inline void blas_init_once() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

inline void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                  int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    blas_init_once();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Valid (unpadded) convolution geometry; padding is applied by explicit pad
// ops before the conv, and transposed convs are lowered onto the same form.
struct ConvGeom {
    int N, Cin, H, W;
    int Cout, k, stride;
    int Ho, Wo;
    // Transposed mode: gather from a virtually dilated/padded input.
    bool transposed = false;
    int t_stride = 1; // dilation factor of the virtual input
    int t_pad = 0;    // top/left virtual padding
};

inline std::size_t col_rows(const ConvGeom& g) {
    return static_cast<std::size_t>(g.Cin) * g.k * g.k;
}

// Writes columns for output rows [oy0, oy1) of one sample.
// col is row-major [Cin*k*k] x [(oy1-oy0)*Wo].
inline void im2col_rows(const ConvGeom& g, const float* x, int oy0, int oy1, float* col) {
    int wo = g.Wo;
    int cols = (oy1 - oy0) * wo;
    std::size_t plane = static_cast<std::size_t>(g.H) * g.W;
    for (int c = 0; c < g.Cin; ++c) {
        const float* xp = x + static_cast<std::size_t>(c) * plane;
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                float* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * cols;
                for (int oy = oy0; oy < oy1; ++oy) {
                    float* dst = row + static_cast<std::size_t>(oy - oy0) * wo;
                    if (!g.transposed) {
                        const float* src = xp + static_cast<std::size_t>(oy * g.stride + ky) * g.W;
                        for (int ox = 0; ox < wo; ++ox) dst[ox] = src[ox * g.stride + kx];
                    } else {
                        int vy = oy + ky - g.t_pad;
                        bool row_ok = vy >= 0 && vy % g.t_stride == 0 && vy / g.t_stride < g.H;
                        if (!row_ok) {
                            std::fill_n(dst, wo, 0.0f);
                            continue;
                        }
                        const float* src = xp + static_cast<std::size_t>(vy / g.t_stride) * g.W;
                        for (int ox = 0; ox < wo; ++ox) {
                            int vx = ox + kx - g.t_pad;
                            dst[ox] = (vx >= 0 && vx % g.t_stride == 0 && vx / g.t_stride < g.W)
                                          ? src[vx / g.t_stride]
                                          : 0.0f;
                        }
                    }
                }
            }
    }
}

// Scatter-add of column gradients back onto the input gradient.
inline void col2im_rows_add(const ConvGeom& g, const float* col, int oy0, int oy1, float* gx) {
    int wo = g.Wo;
    int cols = (oy1 - oy0) * wo;
    std::size_t plane = static_cast<std::size_t>(g.H) * g.W;
    for (int c = 0; c < g.Cin; ++c) {
        float* gp = gx + static_cast<std::size_t>(c) * plane;
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                const float* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * cols;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const float* src = row + static_cast<std::size_t>(oy - oy0) * wo;
                    if (!g.transposed) {
                        float* dst = gp + static_cast<std::size_t>(oy * g.stride + ky) * g.W;
                        for (int ox = 0; ox < wo; ++ox) dst[ox * g.stride + kx] += src[ox];
                    } else {
                        int vy = oy + ky - g.t_pad;
                        if (vy < 0 || vy % g.t_stride != 0 || vy / g.t_stride >= g.H) continue;
                        float* dst = gp + static_cast<std::size_t>(vy / g.t_stride) * g.W;
                        for (int ox = 0; ox < wo; ++ox) {
                            int vx = ox + kx - g.t_pad;
                            if (vx >= 0 && vx % g.t_stride == 0 && vx / g.t_stride < g.W)
                                dst[vx / g.t_stride] += src[ox];
                        }
                    }
                }
            }
    }
}

// Bounds the im2col scratch to ~16 MB so large-resolution forwards stay
// within memory; convs iterate over output-row blocks.
inline int conv_row_chunk(const ConvGeom& g) {
    constexpr std::size_t budget_floats = std::size_t{4} * 1024 * 1024;
    std::size_t per_row = col_rows(g) * static_cast<std::size_t>(g.Wo);
    if (per_row == 0) return g.Ho;
    int rows = static_cast<int>(budget_floats / per_row);
    return std::max(1, std::min(g.Ho, rows));
}

inline std::vector<float>& conv_scratch(int which) {
    static thread_local std::vector<float> bufs[2];
    return bufs[which];
}

// Shared driver for conv2d / conv_transpose2d. Weights are [Cout,Cin,k,k]
// (for the transposed form these are the virtual conv's weights), bias [Cout].
inline Tensor conv_core(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeom g,
                        const char* name) {
    require(x.ndim() == 4, std::string(name) + ": expected NCHW input");
    require(w.ndim() == 4 && w.dim(0) == g.Cout && w.dim(1) == g.Cin && w.dim(2) == g.k &&
                w.dim(3) == g.k,
            std::string(name) + ": weight shape mismatch");
    require(b.ndim() == 1 && b.dim(0) == g.Cout, std::string(name) + ": bias shape mismatch");
    require(g.Ho >= 1 && g.Wo >= 1,
            std::string(name) + ": input spatial size too small for kernel/stride");

    std::size_t out_plane = static_cast<std::size_t>(g.Ho) * g.Wo;
    std::size_t in_per = static_cast<std::size_t>(g.Cin) * g.H * g.W;
    std::size_t out_per = static_cast<std::size_t>(g.Cout) * out_plane;
    std::vector<float> out(static_cast<std::size_t>(g.N) * out_per);

    int kk = static_cast<int>(col_rows(g));
    int chunk = conv_row_chunk(g);
    std::vector<float>& col = conv_scratch(0);
    std::vector<float>& blk = conv_scratch(1);
    col.resize(col_rows(g) * static_cast<std::size_t>(chunk) * g.Wo);
    blk.resize(static_cast<std::size_t>(g.Cout) * chunk * g.Wo);

    for (int n = 0; n < g.N; ++n) {
        const float* xp = x.data() + static_cast<std::size_t>(n) * in_per;
        float* yp = out.data() + static_cast<std::size_t>(n) * out_per;
        for (int oy0 = 0; oy0 < g.Ho; oy0 += chunk) {
            int oy1 = std::min(g.Ho, oy0 + chunk);
            int cols = (oy1 - oy0) * g.Wo;
            im2col_rows(g, xp, oy0, oy1, col.data());
            // Y[:, block] = W · col, written at the block offset per channel.
            sgemm(false, false, g.Cout, cols, kk, 1.0f, w.data(), kk, col.data(), cols, 0.0f,
                  blk.data(), cols);
            const float* yblk = blk.data();
            for (int co = 0; co < g.Cout; ++co)
                std::copy_n(yblk + static_cast<std::size_t>(co) * cols, cols,
                            yp + static_cast<std::size_t>(co) * out_plane +
                                static_cast<std::size_t>(oy0) * g.Wo);
        }
        for (int co = 0; co < g.Cout; ++co) {
            float bias = b.data()[co];
            float* row = yp + static_cast<std::size_t>(co) * out_plane;
            for (std::size_t i = 0; i < out_plane; ++i) row[i] += bias;
        }
    }

    auto px = x.node(), pw = w.node(), pb = b.node();
    return make_op_result(
        {g.N, g.Cout, g.Ho, g.Wo}, std::move(out), {px, pw, pb}, [=](Node* self) {
            return [self, px, pw, pb, g]() {
                std::size_t out_plane = static_cast<std::size_t>(g.Ho) * g.Wo;
                std::size_t in_per = static_cast<std::size_t>(g.Cin) * g.H * g.W;
                std::size_t out_per = static_cast<std::size_t>(g.Cout) * out_plane;
                int kk = static_cast<int>(col_rows(g));
                int chunk = conv_row_chunk(g);
                std::vector<float>& col = conv_scratch(0);
                std::vector<float>& buf = conv_scratch(1);
                col.resize(col_rows(g) * static_cast<std::size_t>(chunk) * g.Wo);
                buf.resize(std::max(col.size(),
                                    static_cast<std::size_t>(g.Cout) * chunk * g.Wo));

                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (int n = 0; n < g.N; ++n)
                        for (int co = 0; co < g.Cout; ++co) {
                            const float* og = self->grad.data() +
                                              static_cast<std::size_t>(n) * out_per +
                                              static_cast<std::size_t>(co) * out_plane;
                            double acc = 0.0;
                            for (std::size_t i = 0; i < out_plane; ++i) acc += og[i];
                            pb->grad[static_cast<std::size_t>(co)] += static_cast<float>(acc);
                        }
                }

                bool need_w = pw->requires_grad;
                bool need_x = px->requires_grad;
                if (!need_w && !need_x) return;
                if (need_w) pw->ensure_grad();
                if (need_x) px->ensure_grad();

                for (int n = 0; n < g.N; ++n) {
                    const float* xp = px->value.data() + static_cast<std::size_t>(n) * in_per;
                    float* gx = need_x ? px->grad.data() + static_cast<std::size_t>(n) * in_per
                                       : nullptr;
                    for (int oy0 = 0; oy0 < g.Ho; oy0 += chunk) {
                        int oy1 = std::min(g.Ho, oy0 + chunk);
                        int cols = (oy1 - oy0) * g.Wo;
                        // Gather dY block into contiguous [Cout x cols].
                        float* dy = buf.data();
                        for (int co = 0; co < g.Cout; ++co)
                            std::copy_n(self->grad.data() + static_cast<std::size_t>(n) * out_per +
                                            static_cast<std::size_t>(co) * out_plane +
                                            static_cast<std::size_t>(oy0) * g.Wo,
                                        cols, dy + static_cast<std::size_t>(co) * cols);
                        if (need_w) {
                            im2col_rows(g, xp, oy0, oy1, col.data());
                            // dW += dY · colᵀ
                            sgemm(false, true, g.Cout, kk, cols, 1.0f, dy, cols, col.data(), cols,
                                  1.0f, pw->grad.data(), kk);
                        }
                        if (need_x) {
                            // dcol = Wᵀ · dY, then scatter-add back to x.
                            sgemm(true, false, kk, cols, g.Cout, 1.0f, pw->value.data(), kk, dy,
                                  cols, 0.0f, col.data(), cols);
                            col2im_rows_add(g, col.data(), oy0, oy1, gx);
                        }
                    }
                }
            };
        });
}

} // namespace detail

/// Valid convolution (no implicit padding) with the given stride.
/// Weights [Cout,Cin,k,k], bias [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1) {
    require(x.ndim() == 4 && w.ndim() == 4, "conv2d: expected NCHW tensors");
    detail::ConvGeom g;
    g.N = x.dim(0);
    g.Cin = x.dim(1);
    g.H = x.dim(2);
    g.W = x.dim(3);
    g.Cout = w.dim(0);
    g.k = w.dim(2);
    g.stride = stride;
    require(stride >= 1, "conv2d: stride must be >= 1");
    g.Ho = (g.H - g.k) / stride + 1;
    g.Wo = (g.W - g.k) / stride + 1;
    if (g.H < g.k || g.W < g.k) g.Ho = g.Wo = 0;
    return detail::conv_core(x, w, b, g, "conv2d");
}

/// Transposed convolution, lowered to a stride-1 valid conv over a virtually
/// dilated input. Weights [Cout,Cin,k,k], i.e. the virtual conv's layout.
/// Output size: (H-1)*stride - 2*pad + k + output_pad.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                               int pad, int output_pad) {
    require(x.ndim() == 4 && w.ndim() == 4, "conv_transpose2d: expected NCHW tensors");
    int k = w.dim(2);
    require(stride >= 1 && pad >= 0 && output_pad >= 0 && output_pad < stride,
            "conv_transpose2d: invalid stride/pad");
    require(pad <= k - 1, "conv_transpose2d: pad must be <= kernel-1");
    detail::ConvGeom g;
    g.N = x.dim(0);
    g.Cin = x.dim(1);
    g.H = x.dim(2);
    g.W = x.dim(3);
    g.Cout = w.dim(0);
    g.k = k;
    g.stride = 1;
    g.transposed = true;
    g.t_stride = stride;
    g.t_pad = k - 1 - pad;
    g.Ho = (g.H - 1) * stride - 2 * pad + k + output_pad;
    g.Wo = (g.W - 1) * stride - 2 * pad + k + output_pad;
    return detail::conv_core(x, w, b, g, "conv_transpose2d");
}

} // namespace relume
