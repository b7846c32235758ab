#include <gtest/gtest.h>

#include <cstdint>
#include <vector>

#include "relume/networks.hpp"
#include "testutil.hpp"

namespace relume {
namespace {

using testutil::random_tensor;

std::int64_t conv_params(int c_in, int c_out, int k) {
    return static_cast<std::int64_t>(k) * k * c_in * c_out + c_out;
}

// Layer arithmetic mirroring the declared topology, written against the
// architecture contract rather than the network classes.
std::int64_t generator_oracle(const GeneratorConfig& g) {
    std::int64_t n = conv_params(g.input_channels, g.base_channels, 7);
    int c = g.base_channels;
    for (int i = 0; i < g.n_downsample; ++i) {
        n += conv_params(c, 2 * c, 3);
        c *= 2;
    }
    n += static_cast<std::int64_t>(g.n_resblocks) * 2 * conv_params(c, c, 3);
    for (int i = 0; i < g.n_upsample; ++i) {
        n += conv_params(c, c / 2, 3);
        c /= 2;
    }
    n += conv_params(c, g.output_channels, 7);
    return n;
}

std::int64_t decomposition_oracle(const DecompositionConfig& d) {
    auto ch = [&](int level) { return std::min(d.base_channels << level, d.base_channels * 8); };
    std::int64_t n = conv_params(d.input_channels, ch(0), 3);
    for (int i = 1; i <= d.depth; ++i) {
        n += conv_params(ch(i - 1), ch(i), 3);
        n += conv_params(ch(i), ch(i), 3);
    }
    for (int out_channels : {3, d.shading_channels}) {
        for (int i = d.depth; i >= 1; --i) {
            n += conv_params(ch(i), ch(i - 1), 3);
            n += conv_params(2 * ch(i - 1), ch(i - 1), 3);
        }
        n += conv_params(ch(0), out_channels, 3);
    }
    return n;
}

std::int64_t discriminator_oracle(const DiscriminatorConfig& d) {
    auto ch = [&](int layer) { return std::min(d.base_channels << layer, d.base_channels * 8); };
    std::int64_t per_scale = 0;
    int c = d.input_channels;
    for (int l = 0; l < d.layers_per_scale; ++l) {
        per_scale += conv_params(c, ch(l), 4);
        c = ch(l);
    }
    per_scale += conv_params(c, 1, 4);
    return per_scale * d.n_scales;
}

TEST(Generator, PreservesShapeAt64) {
    GeneratorConfig cfg;
    cfg.base_channels = 2;
    Rng rng(1);
    Generator g(cfg, rng);
    Tensor x = random_tensor(rng, {1, 3, 64, 64}, -1.0f, 1.0f);
    NoGradGuard ng;
    Tensor y = g.forward(x);
    EXPECT_EQ(y.shape(), x.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        EXPECT_GE(y.data()[i], -1.0f);
        EXPECT_LE(y.data()[i], 1.0f);
    }
}

TEST(Generator, PreservesShapeAtTrainingResolution) {
    GeneratorConfig cfg;
    cfg.base_channels = 2; // shape contract is independent of width multiplier
    Rng rng(2);
    Generator g(cfg, rng);
    Tensor x = Tensor::zeros({1, 3, 512, 768});
    NoGradGuard ng;
    Tensor y = g.forward(x);
    EXPECT_EQ(y.dim(2), 512);
    EXPECT_EQ(y.dim(3), 768);
}

TEST(Generator, RejectsIndivisibleDims) {
    GeneratorConfig cfg;
    cfg.base_channels = 2;
    Rng rng(3);
    Generator g(cfg, rng);
    Tensor x = Tensor::zeros({1, 3, 60, 64}); // 60 % 8 != 0
    EXPECT_THROW(g.forward(x), Error);
    Tensor xc = Tensor::zeros({1, 4, 64, 64});
    EXPECT_THROW(g.forward(xc), Error);
}

TEST(Generator, RejectsBadConfig) {
    GeneratorConfig cfg;
    cfg.base_channels = 0;
    Rng rng(4);
    EXPECT_THROW(Generator(cfg, rng), Error);
    GeneratorConfig cfg2;
    cfg2.n_downsample = 3;
    cfg2.n_upsample = 2;
    EXPECT_THROW(Generator(cfg2, rng), Error);
}

TEST(Generator, DefaultParamCountMatchesOracle) {
    GeneratorConfig cfg; // base 64, 3/9/3
    Rng rng(5);
    Generator g(cfg, rng);
    EXPECT_EQ(g.param_count(), generator_oracle(cfg));
    EXPECT_EQ(g.param_count(), 45593347);
}

TEST(Generator, NarrowConfigParamCountMatchesOracle) {
    GeneratorConfig cfg;
    cfg.base_channels = 6;
    cfg.n_downsample = cfg.n_upsample = 2;
    cfg.n_resblocks = 4;
    cfg.input_channels = 1;
    cfg.output_channels = 1;
    Rng rng(6);
    Generator g(cfg, rng);
    EXPECT_EQ(g.param_count(), generator_oracle(cfg));
}

TEST(Decomposition, OutputsMatchContract) {
    DecompositionConfig cfg;
    cfg.base_channels = 4;
    Rng rng(7);
    DecompositionNet net(cfg, rng);
    Tensor x = random_tensor(rng, {2, 3, 32, 32}, -1.0f, 1.0f);
    NoGradGuard ng;
    auto [r, s] = net.forward(x);
    EXPECT_EQ(r.shape(), (Shape{2, 3, 32, 32}));
    EXPECT_EQ(s.shape(), (Shape{2, 3, 32, 32}));
    for (std::int64_t i = 0; i < r.numel(); ++i) {
        EXPECT_GE(r.data()[i], 0.0f);
        EXPECT_LE(r.data()[i], 1.0f);
    }
    for (std::int64_t i = 0; i < s.numel(); ++i) {
        EXPECT_GE(s.data()[i], 0.0f);
        EXPECT_LE(s.data()[i], 1.0f);
    }
}

TEST(Decomposition, MonoShadingProducesOneChannel) {
    DecompositionConfig cfg;
    cfg.base_channels = 4;
    cfg.shading_channels = 1;
    Rng rng(8);
    DecompositionNet net(cfg, rng);
    Tensor x = random_tensor(rng, {1, 3, 16, 16}, -1.0f, 1.0f);
    NoGradGuard ng;
    auto [r, s] = net.forward(x);
    EXPECT_EQ(r.dim(1), 3);
    EXPECT_EQ(s.dim(1), 1);
}

TEST(Decomposition, ForwardIsDeterministic) {
    DecompositionConfig cfg;
    cfg.base_channels = 4;
    Rng rng(9);
    DecompositionNet net(cfg, rng);
    Tensor x = random_tensor(rng, {1, 3, 16, 16}, -1.0f, 1.0f);
    NoGradGuard ng;
    auto [r1, s1] = net.forward(x);
    auto [r2, s2] = net.forward(x);
    for (std::int64_t i = 0; i < r1.numel(); ++i) EXPECT_EQ(r1.data()[i], r2.data()[i]);
    for (std::int64_t i = 0; i < s1.numel(); ++i) EXPECT_EQ(s1.data()[i], s2.data()[i]);
}

TEST(Decomposition, DefaultParamCountMatchesOracle) {
    DecompositionConfig cfg; // base 64, depth 3
    Rng rng(10);
    DecompositionNet net(cfg, rng);
    EXPECT_EQ(net.param_count(), decomposition_oracle(cfg));
    EXPECT_EQ(net.param_count(), 10846854);
}

TEST(Decomposition, RejectsBadShadingChannels) {
    DecompositionConfig cfg;
    cfg.shading_channels = 2;
    Rng rng(11);
    EXPECT_THROW(DecompositionNet(cfg, rng), Error);
}

// Patch-map side length after the declared conv stack: k=4, pad=1, stride 2
// on all but the last conv layer, then the stride-1 output conv.
int disc_map_side(int input, int layers_per_scale) {
    int s = input;
    auto conv = [](int n, int stride) { return (n + 2 - 4) / stride + 1; };
    for (int l = 0; l < layers_per_scale; ++l) s = conv(s, l + 1 < layers_per_scale ? 2 : 1);
    return conv(s, 1);
}

TEST(Discriminator, MapShapesMatchConvArithmetic) {
    DiscriminatorConfig cfg;
    cfg.base_channels = 2;
    Rng rng(12);
    Discriminator d(cfg, rng);
    Tensor x = random_tensor(rng, {1, 3, 256, 256}, -1.0f, 1.0f);
    NoGradGuard ng;
    auto maps = d.forward(x);
    ASSERT_EQ(maps.size(), 2u);
    // Second scale runs on the 2x average-pooled input (128x128).
    int side0 = disc_map_side(256, cfg.layers_per_scale);
    int side1 = disc_map_side(128, cfg.layers_per_scale);
    EXPECT_EQ(maps[0].shape(), (Shape{1, 1, side0, side0}));
    EXPECT_EQ(maps[1].shape(), (Shape{1, 1, side1, side1}));
}

TEST(Discriminator, ZeroWeightsGiveZeroMaps) {
    DiscriminatorConfig cfg;
    cfg.base_channels = 2;
    Rng rng(13);
    Discriminator d(cfg, rng);
    std::vector<nn::Parameter> params;
    d.collect_params(params, "d");
    for (auto& p : params)
        for (auto& v : p.tensor.values()) v = 0.0f;
    Tensor x = random_tensor(rng, {1, 3, 64, 64}, -1.0f, 1.0f);
    NoGradGuard ng;
    for (const auto& m : d.forward(x))
        for (std::int64_t i = 0; i < m.numel(); ++i) EXPECT_EQ(m.data()[i], 0.0f);
}

TEST(Discriminator, DefaultParamCountMatchesOracle) {
    DiscriminatorConfig cfg; // 2 scales, 4 layers, base 64
    Rng rng(14);
    Discriminator d(cfg, rng);
    EXPECT_EQ(d.param_count(), discriminator_oracle(cfg));
    EXPECT_EQ(d.param_count(), 5529474);
}

TEST(SingleConv, ParamCountFormula) {
    Rng rng(15);
    nn::Conv2dLayer conv(3, 64, 3, 1, 1, PadMode::Zero, rng);
    EXPECT_EQ(conv.param_count(), 1792); // 3*3*3*64 + 64
}

TEST(Bundle, CountsAreExactSums) {
    ModelsConfig cfg;
    cfg.generator.base_channels = 4;
    cfg.generator.n_resblocks = 2;
    cfg.decomposition.base_channels = 4;
    cfg.discriminator.base_channels = 4;
    ModelBundle bundle = build_models(cfg, 0);
    std::int64_t expect = generator_oracle(cfg.generator) +
                          decomposition_oracle(cfg.decomposition) +
                          discriminator_oracle(cfg.discriminator);
    ParamCounts pc = count_params(bundle);
    EXPECT_EQ(pc.trainable, expect);
    EXPECT_EQ(pc.total, expect);
    EXPECT_LE(pc.trainable, pc.total);

    bundle.frozen_aux_params = 1000;
    pc = count_params(bundle);
    EXPECT_EQ(pc.trainable, expect);
    EXPECT_EQ(pc.total, expect + 1000);
}

TEST(Bundle, BuildIsDeterministicAndSeedSensitive) {
    ModelsConfig cfg;
    cfg.generator.base_channels = 2;
    cfg.generator.n_resblocks = 1;
    cfg.decomposition.base_channels = 2;
    cfg.discriminator.base_channels = 2;
    ModelBundle a = build_models(cfg, 41);
    ModelBundle b = build_models(cfg, 41);
    ModelBundle c = build_models(cfg, 42);
    std::vector<nn::Parameter> pa, pb, pc2;
    a.generator.collect_params(pa, "g");
    b.generator.collect_params(pb, "g");
    c.generator.collect_params(pc2, "g");
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff_seed = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        ASSERT_EQ(pa[i].tensor.numel(), pb[i].tensor.numel());
        for (std::int64_t j = 0; j < pa[i].tensor.numel(); ++j) {
            EXPECT_EQ(pa[i].tensor.data()[j], pb[i].tensor.data()[j]);
            if (pa[i].tensor.data()[j] != pc2[i].tensor.data()[j]) any_diff_seed = true;
        }
    }
    EXPECT_TRUE(any_diff_seed);
}

TEST(Bundle, NetworkSeedsAreIndependent) {
    // Resizing the discriminator must not disturb the generator's init.
    ModelsConfig cfg;
    cfg.generator.base_channels = 2;
    cfg.generator.n_resblocks = 1;
    cfg.decomposition.base_channels = 2;
    cfg.discriminator.base_channels = 2;
    ModelsConfig cfg2 = cfg;
    cfg2.discriminator.layers_per_scale = 2;
    ModelBundle a = build_models(cfg, 7);
    ModelBundle b = build_models(cfg2, 7);
    std::vector<nn::Parameter> pa, pb;
    a.generator.collect_params(pa, "g");
    b.generator.collect_params(pb, "g");
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::int64_t j = 0; j < pa[i].tensor.numel(); ++j)
            ASSERT_EQ(pa[i].tensor.data()[j], pb[i].tensor.data()[j]);
}

TEST(Flops, SingleConvFormulaInstantiation) {
    ConvFlopEntry e{3, 3, 64, 64, 64};
    EXPECT_DOUBLE_EQ(e.ops(), 14155776.0);
}

TEST(Flops, DoublingSpatialDimsQuadruplesEstimate) {
    ModelsConfig cfg;
    cfg.generator.base_channels = 4;
    cfg.generator.n_resblocks = 2;
    cfg.decomposition.base_channels = 4;
    cfg.discriminator.base_channels = 4;
    ModelBundle bundle = build_models(cfg, 0);
    double small = estimate_gflops(bundle, 64, 64);
    double big = estimate_gflops(bundle, 128, 128);
    EXPECT_NEAR(big, 4.0 * small, 1e-9 * big);
}

TEST(Flops, TrainingResolutionOrderingAndParamInvariance) {
    ModelsConfig cfg; // paper-scale defaults
    ModelBundle bundle = build_models(cfg, 0);
    ParamCounts before = count_params(bundle);
    double at512 = estimate_gflops(bundle, 512, 512);
    double at768 = estimate_gflops(bundle, 512, 768);
    EXPECT_LT(at512, at768);
    ParamCounts after = count_params(bundle);
    EXPECT_EQ(before.total, after.total);
    EXPECT_EQ(before.trainable, after.trainable);
}

TEST(Flops, RejectsBadResolution) {
    ModelsConfig cfg;
    cfg.generator.base_channels = 2;
    cfg.generator.n_resblocks = 1;
    cfg.decomposition.base_channels = 2;
    cfg.discriminator.base_channels = 2;
    ModelBundle bundle = build_models(cfg, 0);
    EXPECT_THROW(estimate_gflops(bundle, 60, 64), Error);
    EXPECT_THROW(estimate_gflops(bundle, 0, 64), Error);
}

std::vector<Tensor*> param_tensors(std::vector<nn::Parameter>& params) {
    std::vector<Tensor*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p.tensor);
    return out;
}

TEST(NetworkGradients, PassDirectionalFdOnToyInstances) {
    // 8x8 single-channel instances, central differences at step 1e-3,
    // relative error < 1e-2. Depths are reduced so every layer still sees a
    // legal spatial extent at 8x8 (the residual trunk reflect-pads by 1, and
    // the discriminator's final convs need a 2x2 map). The check runs over
    // each network's full parameter vector at once: the aligned probe must
    // recover |g|_2 and the median random probe the matching inner product.
    const double kTol = 1e-2;

    {
        GeneratorConfig gcfg;
        gcfg.base_channels = 2;
        gcfg.n_downsample = gcfg.n_upsample = 2;
        gcfg.n_resblocks = 1;
        gcfg.input_channels = gcfg.output_channels = 1;
        Rng grng(17);
        Generator g(gcfg, grng);
        Rng rng(16);
        Tensor gx = random_tensor(rng, {1, 1, 8, 8}, -0.9f, 0.9f);
        std::vector<nn::Parameter> gparams;
        g.collect_params(gparams, "g");
        auto tensors = param_tensors(gparams);
        auto gobj = [&] { return sum_all(g.forward(gx)); };
        auto r = testutil::joint_params_check(tensors, gobj, rng, 5);
        EXPECT_LT(r.aligned_rel, kTol) << "generator aligned";
        EXPECT_LT(r.median_random_rel, kTol) << "generator random";
    }

    {
        DecompositionConfig dcfg;
        dcfg.base_channels = 2;
        dcfg.depth = 2;
        dcfg.shading_channels = 1;
        Rng drng(18);
        DecompositionNet dn(dcfg, drng);
        Rng rng(16);
        Tensor dx = random_tensor(rng, {1, 3, 8, 8}, -0.9f, 0.9f);
        std::vector<nn::Parameter> dparams;
        dn.collect_params(dparams, "gl");
        auto tensors = param_tensors(dparams);
        auto dobj = [&] {
            auto [r, s] = dn.forward(dx);
            return add(sum_all(r), sum_all(s));
        };
        auto r = testutil::joint_params_check(tensors, dobj, rng, 5);
        EXPECT_LT(r.aligned_rel, kTol) << "decomposition aligned";
        EXPECT_LT(r.median_random_rel, kTol) << "decomposition random";
    }

    {
        DiscriminatorConfig ccfg;
        ccfg.base_channels = 2;
        ccfg.n_scales = 1;
        ccfg.layers_per_scale = 2;
        Rng crng(19);
        Discriminator disc(ccfg, crng);
        Rng rng(16);
        Tensor cx = random_tensor(rng, {1, 3, 8, 8}, -0.9f, 0.9f);
        std::vector<nn::Parameter> cparams;
        disc.collect_params(cparams, "d");
        auto tensors = param_tensors(cparams);
        auto cobj = [&] {
            auto maps = disc.forward(cx);
            Tensor acc = sum_all(maps[0]);
            for (std::size_t i = 1; i < maps.size(); ++i) acc = add(acc, sum_all(maps[i]));
            return acc;
        };
        auto r = testutil::joint_params_check(tensors, cobj, rng, 5);
        EXPECT_LT(r.aligned_rel, kTol) << "discriminator aligned";
        EXPECT_LT(r.median_random_rel, kTol) << "discriminator random";
    }
}

} // namespace
} // namespace relume
