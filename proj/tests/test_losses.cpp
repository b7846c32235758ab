#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "relume/losses.hpp"
#include "relume/metrics.hpp"
#include "testutil.hpp"

namespace relume {
namespace {

using testutil::random_tensor;

// Plain double-precision re-evaluations used as oracles below.
double mean_sq_to(const Tensor& t, double target) {
    double acc = 0;
    for (float v : t.values()) acc += (v - target) * (v - target);
    return acc / static_cast<double>(t.numel());
}

double mean_abs_gap(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        acc += std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]);
    return acc / static_cast<double>(a.numel());
}

// Forward differences matching diff_x/diff_y: last column (resp. row) zero.
std::vector<double> forward_diff(const Tensor& t, bool along_x) {
    int N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    std::vector<double> out(static_cast<std::size_t>(t.numel()), 0.0);
    const float* in = t.data();
    std::size_t plane = static_cast<std::size_t>(H) * W;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
        const float* ip = in + nc * plane;
        double* op = out.data() + nc * plane;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                std::size_t idx = static_cast<std::size_t>(y) * W + x;
                if (along_x && x + 1 < W) op[idx] = static_cast<double>(ip[idx + 1]) - ip[idx];
                if (!along_x && y + 1 < H) op[idx] = static_cast<double>(ip[idx + W]) - ip[idx];
            }
    }
    return out;
}

TEST(GanGeneratorLoss, PerfectScoresGiveZero) {
    std::vector<Tensor> scores{Tensor::filled({1, 1, 6, 6}, 1.0f), Tensor::filled({1, 1, 3, 3}, 1.0f)};
    EXPECT_NEAR(loss_gan_generator(scores).item(), 0.0, 1e-7);
}

TEST(GanGeneratorLoss, UniformScoreValue) {
    std::vector<Tensor> scores{Tensor::filled({2, 1, 4, 4}, 0.7f), Tensor::filled({2, 1, 2, 2}, 0.7f)};
    EXPECT_NEAR(loss_gan_generator(scores).item(), 0.09, 1e-6);
}

TEST(GanGeneratorLoss, MatchesScalarLoop) {
    Rng rng(11);
    std::vector<Tensor> scores{random_tensor(rng, {2, 1, 5, 7}, -0.5f, 1.5f),
                               random_tensor(rng, {2, 1, 3, 4}, -0.5f, 1.5f),
                               random_tensor(rng, {2, 1, 2, 2}, -0.5f, 1.5f)};
    double expected = 0;
    for (const auto& m : scores) expected += mean_sq_to(m, 1.0);
    expected /= static_cast<double>(scores.size());
    EXPECT_NEAR(loss_gan_generator(scores).item(), expected, 1e-6);
}

TEST(GanGeneratorLoss, RejectsEmptyScoreList) {
    EXPECT_THROW(loss_gan_generator({}), Error);
}

TEST(GanDiscriminatorLoss, PerfectSeparationGivesZero) {
    std::vector<Tensor> real{Tensor::filled({1, 1, 4, 4}, 1.0f)};
    std::vector<Tensor> fake{Tensor::filled({1, 1, 4, 4}, 0.0f)};
    EXPECT_NEAR(loss_gan_discriminator(real, fake).item(), 0.0, 1e-7);
}

TEST(GanDiscriminatorLoss, SwappedLabelsCostTwo) {
    std::vector<Tensor> real{Tensor::filled({1, 1, 4, 4}, 0.0f), Tensor::filled({1, 1, 2, 2}, 0.0f)};
    std::vector<Tensor> fake{Tensor::filled({1, 1, 4, 4}, 1.0f), Tensor::filled({1, 1, 2, 2}, 1.0f)};
    EXPECT_NEAR(loss_gan_discriminator(real, fake).item(), 2.0, 1e-6);
}

TEST(GanDiscriminatorLoss, MatchesScalarLoop) {
    Rng rng(12);
    std::vector<Tensor> real{random_tensor(rng, {2, 1, 6, 5}, -0.5f, 1.5f),
                             random_tensor(rng, {2, 1, 3, 3}, -0.5f, 1.5f)};
    std::vector<Tensor> fake{random_tensor(rng, {2, 1, 6, 5}, -0.5f, 1.5f),
                             random_tensor(rng, {2, 1, 3, 3}, -0.5f, 1.5f)};
    double expected = (mean_sq_to(real[0], 1.0) + mean_sq_to(real[1], 1.0)) / 2.0 +
                      (mean_sq_to(fake[0], 0.0) + mean_sq_to(fake[1], 0.0)) / 2.0;
    EXPECT_NEAR(loss_gan_discriminator(real, fake).item(), expected, 1e-6);
}

TEST(OutputSimilarityLoss, IdenticalInputsGiveZero) {
    Rng rng(13);
    Tensor a = random_tensor(rng, {1, 3, 8, 8}, 0.0f, 1.0f);
    EXPECT_NEAR(loss_output_similarity(a, a, LossWeights{}).item(), 0.0, 1e-7);
}

TEST(OutputSimilarityLoss, ConstantGapValue) {
    // Constant images have zero spatial gradients, so only the value term
    // contributes: |0.2 - 0.5| = 0.3.
    Tensor a = Tensor::filled({1, 3, 6, 6}, 0.2f);
    Tensor b = Tensor::filled({1, 3, 6, 6}, 0.5f);
    LossWeights w;
    w.os_includes_l1 = true;
    w.os_includes_gradient = true;
    EXPECT_NEAR(loss_output_similarity(a, b, w).item(), 0.3, 1e-6);
}

TEST(OutputSimilarityLoss, MatchesComposedOracle) {
    Rng rng(14);
    Tensor a = random_tensor(rng, {2, 3, 7, 9}, 0.0f, 1.0f);
    Tensor b = random_tensor(rng, {2, 3, 7, 9}, 0.0f, 1.0f);
    auto gap = [](const std::vector<double>& u, const std::vector<double>& v) {
        double acc = 0;
        for (std::size_t i = 0; i < u.size(); ++i) acc += std::fabs(u[i] - v[i]);
        return acc / static_cast<double>(u.size());
    };
    double l1 = mean_abs_gap(a, b);
    double gx = gap(forward_diff(a, true), forward_diff(b, true));
    double gy = gap(forward_diff(a, false), forward_diff(b, false));

    LossWeights both;
    EXPECT_NEAR(loss_output_similarity(a, b, both).item(), l1 + 0.5 * (gx + gy), 1e-6);

    LossWeights l1_only;
    l1_only.os_includes_gradient = false;
    EXPECT_NEAR(loss_output_similarity(a, b, l1_only).item(), l1, 1e-6);

    LossWeights grad_only;
    grad_only.os_includes_l1 = false;
    EXPECT_NEAR(loss_output_similarity(a, b, grad_only).item(), 0.5 * (gx + gy), 1e-6);

    LossWeights neither;
    neither.os_includes_l1 = false;
    neither.os_includes_gradient = false;
    EXPECT_NEAR(loss_output_similarity(a, b, neither).item(), 0.0, 1e-7);
}

TEST(OutputSimilarityLoss, Symmetric) {
    Rng rng(15);
    Tensor a = random_tensor(rng, {1, 3, 6, 6}, 0.0f, 1.0f);
    Tensor b = random_tensor(rng, {1, 3, 6, 6}, 0.0f, 1.0f);
    LossWeights w;
    EXPECT_NEAR(loss_output_similarity(a, b, w).item(), loss_output_similarity(b, a, w).item(),
                1e-7);
}

TEST(ContentLoss, IdenticalInputsGiveZero) {
    FeatureExtractor fx((FeatureExtractorConfig()));
    Rng rng(16);
    Tensor a = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    EXPECT_NEAR(loss_content(fx, a, a).item(), 0.0, 1e-7);
}

TEST(ContentLoss, MatchesStageWeightedRecomputation) {
    // Recompute the loss from raw taps with the published stage weights, then
    // check linearity: doubling every weight doubles the loss.
    FeatureExtractor fx((FeatureExtractorConfig()));
    Rng rng(17);
    Tensor a = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    Tensor b = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    NoGradGuard ng;
    auto fa = fx.forward(a);
    auto fb = fx.forward(b);
    ASSERT_EQ(fa.size(), 5u);
    double manual = 0;
    for (std::size_t s = 0; s < fa.size(); ++s)
        manual += FeatureExtractorConfig::stage_weights[s] * mean_abs_gap(fa[s], fb[s]);
    double loss = loss_content(fx, a, b).item();
    EXPECT_NEAR(loss, manual, 1e-6);

    double doubled = 0;
    for (std::size_t s = 0; s < fa.size(); ++s)
        doubled += 2.0 * FeatureExtractorConfig::stage_weights[s] * mean_abs_gap(fa[s], fb[s]);
    EXPECT_NEAR(doubled, 2.0 * loss, 1e-6);
}

TEST(ContentLoss, SameSeedExtractorsAgree) {
    FeatureExtractorConfig cfg;
    cfg.seed = 99;
    FeatureExtractor fx1(cfg), fx2(cfg);
    Rng rng(18);
    Tensor a = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    Tensor b = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    EXPECT_DOUBLE_EQ(loss_content(fx1, a, b).item(), loss_content(fx2, a, b).item());
}

TEST(ContentLoss, Symmetric) {
    FeatureExtractor fx((FeatureExtractorConfig()));
    Rng rng(19);
    Tensor a = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    Tensor b = random_tensor(rng, {1, 3, 16, 16}, 0.0f, 1.0f);
    EXPECT_NEAR(loss_content(fx, a, b).item(), loss_content(fx, b, a).item(), 1e-7);
}

TEST(DecompositionLoss, ExactRecompositionGivesZero) {
    Rng rng(20);
    Tensor r = random_tensor(rng, {1, 3, 8, 8}, 0.0f, 1.0f);
    Tensor s = random_tensor(rng, {1, 3, 8, 8}, 0.0f, 1.0f);
    Tensor i = mul(r, s);
    EXPECT_NEAR(loss_decomposition(i, r, s).item(), 0.0, 1e-7);
}

TEST(DecompositionLoss, ConstantGapValue) {
    Tensor i = Tensor::filled({1, 3, 5, 5}, 0.5f);
    Tensor r = Tensor::filled({1, 3, 5, 5}, 1.0f);
    Tensor s = Tensor::filled({1, 3, 5, 5}, 0.4f);
    EXPECT_NEAR(loss_decomposition(i, r, s).item(), 0.1, 1e-6);
}

TEST(DecompositionLoss, MatchesScalarLoop) {
    Rng rng(21);
    Tensor i = random_tensor(rng, {2, 3, 6, 6}, 0.0f, 1.0f);
    Tensor r = random_tensor(rng, {2, 3, 6, 6}, 0.0f, 1.0f);
    Tensor s = random_tensor(rng, {2, 3, 6, 6}, 0.0f, 1.0f);
    double acc = 0;
    for (std::int64_t k = 0; k < i.numel(); ++k)
        acc += std::fabs(static_cast<double>(i.data()[k]) -
                         static_cast<double>(r.data()[k]) * s.data()[k]);
    EXPECT_NEAR(loss_decomposition(i, r, s).item(), acc / static_cast<double>(i.numel()), 1e-6);
}

TEST(DecompositionLoss, SingleChannelShadingBroadcasts) {
    Rng rng(22);
    Tensor r = random_tensor(rng, {1, 3, 6, 6}, 0.1f, 1.0f);
    Tensor s = random_tensor(rng, {1, 1, 6, 6}, 0.1f, 1.0f);
    Tensor i = recompose(r, s);
    EXPECT_NEAR(loss_decomposition(i, r, s).item(), 0.0, 1e-7);
}

TEST(ReflectanceLoss, IdenticalInputsGiveZero) {
    Rng rng(23);
    Tensor r = random_tensor(rng, {1, 3, 8, 8}, 0.0f, 1.0f);
    EXPECT_NEAR(loss_reflectance(r, r).item(), 0.0, 1e-7);
}

TEST(ReflectanceLoss, ConstantGapValue) {
    Tensor a = Tensor::filled({1, 3, 4, 4}, 0.0f);
    Tensor b = Tensor::filled({1, 3, 4, 4}, 0.5f);
    EXPECT_NEAR(loss_reflectance(a, b).item(), 0.25, 1e-6);
}

TEST(ReflectanceLoss, MatchesScalarLoopAndSymmetric) {
    Rng rng(24);
    Tensor a = random_tensor(rng, {2, 3, 5, 5}, 0.0f, 1.0f);
    Tensor b = random_tensor(rng, {2, 3, 5, 5}, 0.0f, 1.0f);
    double acc = 0;
    for (std::int64_t k = 0; k < a.numel(); ++k) {
        double d = static_cast<double>(a.data()[k]) - b.data()[k];
        acc += d * d;
    }
    EXPECT_NEAR(loss_reflectance(a, b).item(), acc / static_cast<double>(a.numel()), 1e-6);
    EXPECT_NEAR(loss_reflectance(a, b).item(), loss_reflectance(b, a).item(), 1e-7);
}

TEST(TotalGeneratorLoss, AllZeroWeightsGiveZero) {
    GeneratorLossTerms terms; // every term left undefined
    LossWeights w;
    w.w_gan = w.w_os = w.w_cp = w.w_r = w.w_dcp = 0;
    LossReport report;
    EXPECT_NEAR(total_generator_loss(terms, w, &report).item(), 0.0, 1e-7);
    EXPECT_DOUBLE_EQ(report.total_g, 0.0);
}

TEST(TotalGeneratorLoss, ReconstructionOnlyPerfectGivesZero) {
    Rng rng(25);
    Tensor r = random_tensor(rng, {1, 3, 6, 6}, 0.0f, 1.0f);
    Tensor s = random_tensor(rng, {1, 3, 6, 6}, 0.0f, 1.0f);
    GeneratorLossTerms terms;
    terms.dcp = loss_decomposition(mul(r, s), r, s);
    LossWeights w;
    w.w_gan = w.w_os = w.w_cp = w.w_r = 0;
    w.w_dcp = 10;
    EXPECT_NEAR(total_generator_loss(terms, w).item(), 0.0, 1e-6);
}

TEST(TotalGeneratorLoss, MatchesWeightedSum) {
    GeneratorLossTerms terms;
    terms.gan = Tensor::filled({1}, 0.25f);
    terms.os = Tensor::filled({1}, 0.125f);
    terms.cp = Tensor::filled({1}, 0.5f);
    terms.r = Tensor::filled({1}, 0.75f);
    terms.dcp = Tensor::filled({1}, 0.0625f);
    LossWeights w;
    w.w_gan = 1;
    w.w_os = 10;
    w.w_cp = 10;
    w.w_r = 1;
    w.w_dcp = 10;
    double expected = 1 * 0.25 + 10 * 0.125 + 10 * 0.5 + 1 * 0.75 + 10 * 0.0625;
    LossReport report;
    EXPECT_NEAR(total_generator_loss(terms, w, &report).item(), expected, 1e-6);
    EXPECT_NEAR(report.total_g, expected, 1e-9);
    EXPECT_DOUBLE_EQ(report.l_g, 0.25);
    EXPECT_DOUBLE_EQ(report.l_dcp, 0.0625);
}

TEST(TotalGeneratorLoss, ZeroWeightDropsTermEntirely) {
    GeneratorLossTerms terms;
    terms.gan = Tensor::filled({1}, 123.0f); // would dominate if included
    terms.dcp = Tensor::filled({1}, 0.5f);
    LossWeights w;
    w.w_gan = 0;
    w.w_os = w.w_cp = w.w_r = 0;
    w.w_dcp = 2;
    LossReport report;
    EXPECT_NEAR(total_generator_loss(terms, w, &report).item(), 1.0, 1e-6);
    EXPECT_DOUBLE_EQ(report.l_g, 0.0);
}

TEST(TotalGeneratorLoss, MissingTermForNonzeroWeightThrows) {
    GeneratorLossTerms terms; // nothing computed
    LossWeights w;            // default weights are all positive
    EXPECT_THROW(total_generator_loss(terms, w), Error);
}

TEST(LossGradients, FlowToInputs) {
    // Directional central differences at step 1e-3, median over 5 random
    // directions per term. The median damps the O(step) outliers that
    // absolute-value kinks contribute along unlucky single directions.
    Rng rng(26);
    const double kTol = 1e-2;

    Tensor a = random_tensor(rng, {1, 3, 4, 4}, 0.2f, 0.8f, true);
    Tensor b = random_tensor(rng, {1, 3, 4, 4}, 0.2f, 0.8f);
    LossWeights w;
    EXPECT_LT(testutil::median_directional_rel(
                  a, [&] { return loss_output_similarity(a, b, w); }, rng, 5),
              kTol);
    EXPECT_LT(testutil::median_directional_rel(a, [&] { return loss_reflectance(a, b); }, rng, 5),
              kTol);

    Tensor i = random_tensor(rng, {1, 3, 4, 4}, 0.2f, 0.8f);
    Tensor s = random_tensor(rng, {1, 3, 4, 4}, 0.2f, 0.8f);
    EXPECT_LT(
        testutil::median_directional_rel(a, [&] { return loss_decomposition(i, a, s); }, rng, 5),
        kTol);

    Tensor score = random_tensor(rng, {1, 1, 4, 4}, -0.5f, 1.5f, true);
    EXPECT_LT(testutil::median_directional_rel(
                  score, [&] { return loss_gan_generator({score}); }, rng, 5),
              kTol);
    EXPECT_LT(testutil::median_directional_rel(
                  score,
                  [&] {
                      return loss_gan_discriminator({score}, {Tensor::filled({1, 1, 4, 4}, 0.3f)});
                  },
                  rng, 5),
              kTol);

    // The feature pyramid halves resolution four times, so its minimum input
    // is 16x16.
    FeatureExtractor fx((FeatureExtractorConfig()));
    Tensor ca = random_tensor(rng, {1, 3, 16, 16}, 0.2f, 0.8f, true);
    Tensor cb = random_tensor(rng, {1, 3, 16, 16}, 0.2f, 0.8f);
    EXPECT_LT(
        testutil::median_directional_rel(ca, [&] { return loss_content(fx, ca, cb); }, rng, 5),
        kTol);
}

TEST(LossWeights, AblationRowsAreConstructible) {
    TrainConfig base;
    auto rows = loss_ablation_grid(base);
    ASSERT_EQ(rows.size(), 5u);
    // Core row keeps only the adversarial and reconstruction terms.
    EXPECT_EQ(rows[0].first, "core");
    EXPECT_GT(rows[0].second.weights.w_gan, 0.0);
    EXPECT_GT(rows[0].second.weights.w_dcp, 0.0);
    EXPECT_EQ(rows[0].second.weights.w_os, 0.0);
    EXPECT_EQ(rows[0].second.weights.w_cp, 0.0);
    EXPECT_EQ(rows[0].second.weights.w_r, 0.0);
    // Each later row enables more terms, ending fully enabled.
    EXPECT_GT(rows[1].second.weights.w_os, 0.0);
    EXPECT_EQ(rows[1].second.weights.w_cp, 0.0);
    EXPECT_GT(rows[2].second.weights.w_cp, 0.0);
    EXPECT_EQ(rows[2].second.weights.w_os, 0.0);
    EXPECT_GT(rows[3].second.weights.w_os, 0.0);
    EXPECT_GT(rows[3].second.weights.w_cp, 0.0);
    EXPECT_EQ(rows[3].second.weights.w_r, 0.0);
    EXPECT_GT(rows[4].second.weights.w_r, 0.0);
    for (const auto& row : rows) EXPECT_NO_THROW(row.second.weights.validate());

    auto variants = os_variants_grid(base);
    ASSERT_EQ(variants.size(), 3u);
    EXPECT_EQ(variants[0].second.weights.w_os, 0.0);
    EXPECT_GT(variants[1].second.weights.w_os, 0.0);
    EXPECT_FALSE(variants[1].second.weights.os_includes_gradient);
    EXPECT_GT(variants[2].second.weights.w_os, 0.0);
    EXPECT_TRUE(variants[2].second.weights.os_includes_gradient);
    for (const auto& row : variants) {
        EXPECT_EQ(row.second.weights.w_cp, 0.0);
        EXPECT_EQ(row.second.weights.w_r, 0.0);
    }
}

} // namespace
} // namespace relume
