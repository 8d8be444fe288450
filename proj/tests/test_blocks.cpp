// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "ardu/blocks.hpp"
#include "ref_net.hpp"
#include "test_util.hpp"

namespace ardu {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

constexpr float kTol = 1e-5f;

// Fresh parameters are all-ones gammas and zero biases; perturb them so the
// oracle comparisons exercise every term.
void randomize(ParameterStore& store, std::uint64_t seed) {
    std::uint64_t k = seed;
    for (const auto& p : store.parameters()) {
        Tensor t = p.value;
        const Tensor r = random_tensor(t.shape(), ++k, -0.5f, 0.5f);
        for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] += r.data()[i];
    }
    for (const auto& s : store.stats()) {
        for (std::size_t c = 0; c < s.stats->mean.size(); ++c) {
            s.stats->mean[c] = 0.1f * static_cast<float>(c % 3) - 0.1f;
            s.stats->var[c] = 0.5f + 0.25f * static_cast<float>(c % 4);
        }
    }
}

TEST(SqueezeExcite, MatchesComposition) {
    ParameterStore store(1);
    const auto se = SqueezeExcite::create(store, "se", 8, 4);
    randomize(store, 1);
    const Tensor x = random_tensor({2, 8, 5, 6}, 11);
    EXPECT_LT(max_abs_diff(se(x).data(), ref::to_float(ref::se(ref::of(x), se))), kTol);
}

TEST(SqueezeExcite, HiddenWidthIsChannelsOverRatio) {
    ParameterStore store(1);
    const auto se = SqueezeExcite::create(store, "se", 16, 8);
    EXPECT_EQ(se.reduce.out_channels(), 2);
    EXPECT_EQ(se.expand.out_channels(), 16);
}

TEST(SqueezeExcite, ZeroExpandGivesHalfScale) {
    ParameterStore store(1);
    const auto se = SqueezeExcite::create(store, "se", 4, 2);
    for (float& v : Tensor(se.expand.weight).data()) v = 0.0f;
    const Tensor x = random_tensor({1, 4, 3, 3}, 2);
    const Tensor y = se(x);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(y.data()[i], 0.5f * x.data()[i]);
}

class ConvBlockOracle : public ::testing::TestWithParam<std::tuple<bool, Mode>> {};

TEST_P(ConvBlockOracle, MatchesComposition) {
    const auto [residual, mode] = GetParam();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ParameterStore store(seed);
        const auto block = ConvBlock::create(store, "b", {3, 8, 4}, residual);
        randomize(store, seed);
        const Tensor x = random_tensor({2, 3, 6, 7}, 100 + seed);
        const Tensor y = block.forward(x, mode);
        EXPECT_EQ(y.shape(), (Shape{2, 8, 6, 7}));
        EXPECT_LT(max_abs_diff(y.data(), ref::to_float(ref::conv_block(ref::of(x), block, mode))), kTol);
    }
}

INSTANTIATE_TEST_SUITE_P(Variants, ConvBlockOracle,
                         ::testing::Combine(::testing::Bool(), ::testing::Values(Mode::Train, Mode::Infer)));

TEST(ConvBlock, NoResidualHasNoShortcutParameters) {
    ParameterStore with(0), without(0);
    ConvBlock::create(with, "b", {4, 8, 4}, true);
    ConvBlock::create(without, "b", {4, 8, 4}, false);
    EXPECT_TRUE(with.contains("b.shortcut.weight"));
    EXPECT_FALSE(without.contains("b.shortcut.weight"));
    EXPECT_EQ(with.scalar_count() - without.scalar_count(), 4u * 8 + 8 + 2 * 8);
}

TEST(ConvBlock, RejectsIndivisibleSeRatio) {
    ParameterStore store(0);
    EXPECT_THROW(ConvBlock::create(store, "b", {4, 6, 4}, true), Error);
}

TEST(ConvBlock, RejectsChannelMismatch) {
    ParameterStore store(0);
    const auto block = ConvBlock::create(store, "b", {4, 8, 4}, true);
    EXPECT_THROW(block.forward(Tensor::zeros({1, 3, 4, 4}), Mode::Train), Error);
}

TEST(ConvBlock, TrainModeUpdatesRunningStatistics) {
    ParameterStore store(0);
    const auto block = ConvBlock::create(store, "b", {3, 4, 2}, true);
    const auto before = block.bn1.stats->mean;
    block.forward(random_tensor({2, 3, 4, 4}, 1), Mode::Train);
    EXPECT_NE(before, block.bn1.stats->mean);
    const auto after = block.bn1.stats->mean;
    block.forward(random_tensor({2, 3, 4, 4}, 2), Mode::Infer);
    EXPECT_EQ(after, block.bn1.stats->mean);
}

class AttentionOracle : public ::testing::TestWithParam<bool> {};

TEST_P(AttentionOracle, MatchesComposition) {
    const bool half = GetParam();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ParameterStore store(seed);
        const auto gate = AttentionGate::create(store, "ag", {6, 4, 0});
        randomize(store, seed);
        const Tensor skip = random_tensor({2, 4, 8, 6}, 10 + seed);
        const Tensor g = half ? random_tensor({2, 6, 4, 3}, 20 + seed) : random_tensor({2, 6, 8, 6}, 20 + seed);
        const AttentionOutput out = gate.forward(skip, g);
        const ref::Gated want = ref::attention(ref::of(skip), ref::of(g), gate);
        EXPECT_EQ(out.gated.shape(), skip.shape());
        EXPECT_EQ(out.alpha.shape(), (Shape{2, 1, 8, 6}));
        EXPECT_LT(max_abs_diff(out.gated.data(), ref::to_float(want.gated)), kTol);
        EXPECT_LT(max_abs_diff(out.alpha.data(), ref::to_float(want.alpha)), kTol);
        for (float a : out.alpha.data()) {
            EXPECT_GE(a, 0.0f);
            EXPECT_LE(a, 1.0f);
        }
    }
}

INSTANTIATE_TEST_SUITE_P(GateExtent, AttentionOracle, ::testing::Bool());

TEST(AttentionGate, DefaultInterChannelsIsHalfSkip) {
    ParameterStore store(0);
    EXPECT_EQ(AttentionGate::create(store, "a", {8, 6, 0}).theta_x.out_channels(), 3);
    EXPECT_EQ(AttentionGate::create(store, "b", {8, 1, 0}).theta_x.out_channels(), 1);
    EXPECT_EQ(AttentionGate::create(store, "c", {8, 6, 5}).theta_x.out_channels(), 5);
}

TEST(AttentionGate, ZeroPsiGivesUniformHalf) {
    ParameterStore store(0);
    const auto gate = AttentionGate::create(store, "ag", {4, 4, 0});
    for (float& v : Tensor(gate.psi.weight).data()) v = 0.0f;
    const Tensor skip = random_tensor({1, 4, 8, 8}, 3);
    const AttentionOutput out = gate.forward(skip, random_tensor({1, 4, 4, 4}, 4));
    for (float a : out.alpha.data()) EXPECT_EQ(a, 0.5f);
    for (std::size_t i = 0; i < skip.numel(); ++i) EXPECT_EQ(out.gated.data()[i], 0.5f * skip.data()[i]);
}

TEST(AttentionGate, RejectsIncompatibleExtents) {
    ParameterStore store(0);
    const auto gate = AttentionGate::create(store, "ag", {4, 4, 0});
    EXPECT_THROW(gate.forward(Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({1, 4, 3, 3})), Error);
    EXPECT_THROW(gate.forward(Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({1, 5, 4, 4})), Error);
    EXPECT_THROW(gate.forward(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({1, 4, 4, 4})), Error);
}

class AsppOracle : public ::testing::TestWithParam<Mode> {};

TEST_P(AsppOracle, MatchesComposition) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ParameterStore store(seed);
        const auto aspp = Aspp::create(store, "aspp", {5, 4, {1, 2, 3}});
        randomize(store, seed);
        const Tensor x = random_tensor({2, 5, 6, 5}, 30 + seed);
        const Tensor y = aspp.forward(x, GetParam());
        EXPECT_EQ(y.shape(), (Shape{2, 4, 6, 5}));
        EXPECT_LT(max_abs_diff(y.data(), ref::to_float(ref::aspp(ref::of(x), aspp, GetParam()))), kTol);
    }
}

INSTANTIATE_TEST_SUITE_P(Modes, AsppOracle, ::testing::Values(Mode::Train, Mode::Infer));

TEST(Aspp, BranchLayout) {
    ParameterStore store(0);
    const auto aspp = Aspp::create(store, "aspp", {8, 4, {1, 6, 12, 18}});
    ASSERT_EQ(aspp.branches.size(), 4u);
    EXPECT_EQ(aspp.branches[0].weight.shape(), (Shape{4, 8, 1, 1}));
    for (std::size_t i = 1; i < 4; ++i) {
        EXPECT_EQ(aspp.branches[i].weight.shape(), (Shape{4, 8, 3, 3}));
        EXPECT_EQ(aspp.branches[i].options.dilation, aspp.spec.rates[i]);
        EXPECT_EQ(aspp.branches[i].options.padding, aspp.spec.rates[i]);
    }
    EXPECT_EQ(aspp.fuse.in_channels(), 5 * 4);
}

TEST(Aspp, RejectsBadRates) {
    ParameterStore store(0);
    EXPECT_THROW(Aspp::create(store, "a", {4, 4, {2, 3}}), Error);
    EXPECT_THROW(Aspp::create(store, "b", {4, 4, {1, 3, 3}}), Error);
    EXPECT_THROW(Aspp::create(store, "c", {4, 4, {}}), Error);
}

TEST(VggEncoder, SixteenConvolutionsInFiveStages) {
    ParameterStore store(0);
    const auto enc = VggEncoder::create(store, "enc", 3, 1.0);
    EXPECT_EQ(enc.conv_count(), 16u);
    ASSERT_EQ(enc.stages.size(), 5u);
    const int depth[] = {2, 2, 4, 4, 4};
    const int width[] = {64, 128, 256, 512, 512};
    int in = 3;
    for (std::size_t s = 0; s < 5; ++s) {
        ASSERT_EQ(static_cast<int>(enc.stages[s].size()), depth[s]);
        for (const Conv2d& c : enc.stages[s]) {
            EXPECT_EQ(c.weight.shape(), (Shape{width[s], in, 3, 3}));
            EXPECT_EQ(c.options.padding, 1);
            in = width[s];
        }
    }
    // 20,018,880 weights plus 5,504 biases.
    std::size_t n = 0;
    for (const auto& p : store.parameters()) n += p.value.numel();
    EXPECT_EQ(n, 20024384u);
}

TEST(VggEncoder, MatchesCompositionAndSkipExtents) {
    ParameterStore store(4);
    const auto enc = VggEncoder::create(store, "enc", 3, 1.0 / 32);
    randomize(store, 4);
    const Tensor x = random_tensor({1, 3, 32, 16}, 5);
    const EncoderOutput out = enc.forward(x);
    const ref::Encoded want = ref::vgg(ref::of(x), enc);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(out.skips[i].shape(), (Shape{1, enc.widths[i], 32 >> i, 16 >> i}));
        // No normalization in this path, so activations grow; compare relative to scale.
        EXPECT_LT(testing::max_scaled_diff(out.skips[i].data(), ref::to_float(want.skips[i])), kTol);
    }
    EXPECT_EQ(out.bottleneck.shape(), (Shape{1, enc.widths[4], 2, 1}));
    EXPECT_LT(testing::max_scaled_diff(out.bottleneck.data(), ref::to_float(want.bottleneck)), kTol);
}

TEST(VggEncoder, RejectsIndivisibleExtent) {
    ParameterStore store(0);
    const auto enc = VggEncoder::create(store, "enc", 3, 1.0 / 64);
    EXPECT_THROW(enc.forward(Tensor::zeros({1, 3, 24, 16})), Error);
}

TEST(DecoderBlock, MatchesComposition) {
    ParameterStore store(2);
    const auto dec = DecoderBlock::create(store, "d", {4 + 3 + 2, 4, 2}, true);
    randomize(store, 2);
    const Tensor x = random_tensor({2, 4, 3, 4}, 1);
    const Tensor s1 = random_tensor({2, 3, 6, 8}, 2);
    const Tensor s2 = random_tensor({2, 2, 6, 8}, 3);
    const Tensor y = dec.forward(x, {s1, s2}, Mode::Train);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 6, 8}));
    const ref::D want = ref::decoder(ref::of(x), {ref::of(s1), ref::of(s2)}, dec, Mode::Train);
    EXPECT_LT(max_abs_diff(y.data(), ref::to_float(want)), kTol);
    EXPECT_THROW(dec.forward(x, {random_tensor({2, 3, 5, 8}, 4), s2}, Mode::Train), Error);
}

TEST(ParameterStore, SameSeedAndNameGiveSameValues) {
    ParameterStore a(9), b(9), c(10);
    const Tensor ta = a.create("x.weight", {4, 4, 3, 3}, Init::HeUniform, 36);
    b.create("other.weight", {2, 2, 1, 1}, Init::HeUniform, 2);
    const Tensor tb = b.create("x.weight", {4, 4, 3, 3}, Init::HeUniform, 36);
    const Tensor tc = c.create("x.weight", {4, 4, 3, 3}, Init::HeUniform, 36);
    EXPECT_EQ(max_abs_diff(ta.data(), tb.data()), 0.0f);
    EXPECT_GT(max_abs_diff(ta.data(), tc.data()), 0.0f);
    const float limit = std::sqrt(6.0f / 36.0f);
    for (float v : ta.data()) EXPECT_LE(std::abs(v), limit);
}

TEST(ParameterStore, DuplicateAndMissingNames) {
    ParameterStore store(0);
    store.create("w", {1, 1, 1, 1}, Init::Zeros);
    EXPECT_THROW(store.create("w", {1, 1, 1, 1}, Init::Zeros), Error);
    EXPECT_THROW(store.find("nope"), Error);
    EXPECT_THROW(store.create("he", {1, 1, 1, 1}, Init::HeUniform, 0), Error);
}

}  // namespace
}  // namespace ardu
