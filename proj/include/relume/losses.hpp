#pragma once

#include <string>
#include <vector>

#include "relume/perceptual.hpp"
#include "relume/tensor.hpp"
#include "relume/tensor_ops.hpp"

namespace relume {

struct LossWeights {
    double w_gan = 1.0;
    double w_os = 10.0;
    double w_cp = 10.0;
    double w_r = 1.0;
    double w_dcp = 10.0;
    bool os_includes_l1 = true;
    bool os_includes_gradient = true;

    void validate() const {
        require(w_gan >= 0 && w_os >= 0 && w_cp >= 0 && w_r >= 0 && w_dcp >= 0,
                "LossWeights: weights must be nonnegative");
    }
};

struct LossReport {
    double l_g = 0, l_d = 0, l_os = 0, l_cp = 0, l_r = 0, l_dcp = 0;
    double total_g = 0, total_d = 0;
};

namespace detail {

inline Tensor mean_of_scalars(const std::vector<Tensor>& parts) {
    Tensor acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return mul_scalar(acc, 1.0f / static_cast<float>(parts.size()));
}

} // namespace detail

/// Mean over scales of mean squared deviation of fake scores from 1.
inline Tensor loss_gan_generator(const std::vector<Tensor>& fake_scores) {
    require(!fake_scores.empty(), "loss_gan_generator: empty score list");
    std::vector<Tensor> parts;
    parts.reserve(fake_scores.size());
    for (const auto& m : fake_scores) parts.push_back(mse_to_value(m, 1.0f));
    return detail::mean_of_scalars(parts);
}

/// Real scores pulled to 1, fake scores pulled to 0, each averaged over scales.
inline Tensor loss_gan_discriminator(const std::vector<Tensor>& real_scores,
                                     const std::vector<Tensor>& fake_scores) {
    require(!real_scores.empty() && !fake_scores.empty(),
            "loss_gan_discriminator: empty score list");
    std::vector<Tensor> real_parts, fake_parts;
    for (const auto& m : real_scores) real_parts.push_back(mse_to_value(m, 1.0f));
    for (const auto& m : fake_scores) fake_parts.push_back(mse_to_value(m, 0.0f));
    return add(detail::mean_of_scalars(real_parts), detail::mean_of_scalars(fake_parts));
}

/// Cross-branch agreement: L1 on values and/or L1 on forward-difference
/// spatial gradients, per flags. Both flags off yields a constant zero.
inline Tensor loss_output_similarity(const Tensor& a, const Tensor& b, const LossWeights& w) {
    detail::check_same_shape(a, b, "loss_output_similarity");
    Tensor total;
    if (w.os_includes_l1) total = l1_distance(a, b);
    if (w.os_includes_gradient) {
        Tensor gx = l1_distance(diff_x(a), diff_x(b));
        Tensor gy = l1_distance(diff_y(a), diff_y(b));
        Tensor g = mul_scalar(add(gx, gy), 0.5f);
        total = total.defined() ? add(total, g) : g;
    }
    if (!total.defined()) total = Tensor::zeros({1});
    return total;
}

/// Stage-weighted L1 between extractor features of the two images ([0,1]).
inline Tensor loss_content(const FeatureExtractor& extractor, const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "loss_content");
    std::vector<Tensor> fa = extractor.forward(a);
    std::vector<Tensor> fb = extractor.forward(b);
    Tensor total;
    for (std::size_t s = 0; s < fa.size(); ++s) {
        Tensor term = mul_scalar(l1_distance(fa[s], fb[s]), FeatureExtractorConfig::stage_weights[s]);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

/// Reconstruction fidelity of the decomposition: mean abs(i - r*s).
inline Tensor loss_decomposition(const Tensor& i, const Tensor& r, const Tensor& s) {
    detail::check_same_shape(i, r, "loss_decomposition");
    return l1_distance(i, recompose(r, s));
}

/// Cross-branch reflectance consistency: mean squared difference.
inline Tensor loss_reflectance(const Tensor& r_a, const Tensor& r_b) {
    detail::check_same_shape(r_a, r_b, "loss_reflectance");
    return mse_distance(r_a, r_b);
}

/// Already-computed per-term scalars; undefined tensors mean "not computed".
struct GeneratorLossTerms {
    Tensor gan, os, cp, r, dcp;
};

/// Weighted sum over enabled terms. A zero weight removes the term entirely;
/// a positive weight requires the term tensor to be present.
inline Tensor total_generator_loss(const GeneratorLossTerms& terms, const LossWeights& w,
                                   LossReport* report = nullptr) {
    w.validate();
    Tensor total;
    auto accumulate = [&](const Tensor& t, double weight, const char* name, double* slot) {
        if (weight == 0.0) return;
        require(t.defined(), std::string("total_generator_loss: missing term for nonzero weight: ") + name);
        Tensor wt = mul_scalar(t, static_cast<float>(weight));
        total = total.defined() ? add(total, wt) : wt;
        if (slot) *slot = t.item();
    };
    double* g = report ? &report->l_g : nullptr;
    double* os = report ? &report->l_os : nullptr;
    double* cp = report ? &report->l_cp : nullptr;
    double* r = report ? &report->l_r : nullptr;
    double* dcp = report ? &report->l_dcp : nullptr;
    accumulate(terms.gan, w.w_gan, "gan", g);
    accumulate(terms.os, w.w_os, "os", os);
    accumulate(terms.cp, w.w_cp, "cp", cp);
    accumulate(terms.r, w.w_r, "r", r);
    accumulate(terms.dcp, w.w_dcp, "dcp", dcp);
    if (!total.defined()) total = Tensor::zeros({1});
    if (report)
        report->total_g = w.w_gan * report->l_g + w.w_os * report->l_os + w.w_cp * report->l_cp +
                          w.w_r * report->l_r + w.w_dcp * report->l_dcp;
    return total;
}

// ---------------------------------------------------------------------------
// Image-level convenience evaluations (no gradient tracking).
// ---------------------------------------------------------------------------

inline double loss_output_similarity(const Image& a, const Image& b, const LossWeights& w) {
    NoGradGuard ng;
    return loss_output_similarity(image_to_tensor(a), image_to_tensor(b), w).item();
}

inline double loss_content(const FeatureExtractor& extractor, const Image& a, const Image& b) {
    NoGradGuard ng;
    return loss_content(extractor, image_to_tensor(a), image_to_tensor(b)).item();
}

inline double loss_decomposition(const Image& i, const Image& r, const Image& s) {
    NoGradGuard ng;
    return loss_decomposition(image_to_tensor(i), image_to_tensor(r), image_to_tensor(s)).item();
}

inline double loss_reflectance(const Image& r_a, const Image& r_b) {
    NoGradGuard ng;
    return loss_reflectance(image_to_tensor(r_a), image_to_tensor(r_b)).item();
}

} // namespace relume
