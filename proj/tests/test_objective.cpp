// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ardu/objective.hpp"
#include "test_util.hpp"

namespace ardu {
namespace {

using testing::random_tensor;

Tensor binary(Shape s, std::uint64_t seed, double p = 0.5) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution d(p);
    std::vector<float> v(s.numel());
    for (float& x : v) x = d(rng) ? 1.0f : 0.0f;
    return Tensor::from_data(s, std::move(v));
}

TEST(DiceLoss, PerfectPredictionIsZero) {
    const Tensor t = binary({2, 1, 5, 5}, 1);
    for (double lambda : {0.1, 1.0, 7.0}) EXPECT_EQ(dice_loss(t, t, lambda).item(), 0.0f);
}

TEST(DiceLoss, BothEmptyIsZero) {
    const Tensor z = Tensor::zeros({1, 1, 4, 4});
    EXPECT_EQ(dice_loss(z, z, 1.0).item(), 0.0f);
}

TEST(DiceLoss, SinglePixelMiss) {
    const Tensor y = Tensor::from_data({1, 1, 1, 1}, {1.0f});
    const Tensor p = Tensor::from_data({1, 1, 1, 1}, {0.0f});
    EXPECT_EQ(dice_loss(p, y, 1.0).item(), 0.5f);
}

TEST(DiceLoss, RangeAndShapeCheck) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Tensor p = random_tensor({2, 1, 6, 6}, seed, 0.001f, 0.999f);
        const float l = dice_loss(p, binary({2, 1, 6, 6}, seed + 100), 1.0).item();
        EXPECT_GE(l, 0.0f);
        EXPECT_LT(l, 1.0f);
    }
    EXPECT_THROW(dice_loss(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 3})), Error);
    EXPECT_THROW(dice_loss(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 2}), 0.0), Error);
}

TEST(DiceLoss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Tensor p = random_tensor({2, 4, 6, 6}, seed, 0.05f, 0.95f, true);
        const Tensor t = binary({2, 4, 6, 6}, seed + 7);
        const auto r = testing::check_gradients([&] { return dice_loss(p, t, 1.0); }, {p}, seed, 2e-2);
        EXPECT_LT(r.rel_error, 1e-3) << "seed " << seed;
    }
}

TEST(DiceLoss, SoftEqualsHardOnBinaryInputs) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Tensor p = binary({1, 1, 8, 8}, seed, 0.3);
        const Tensor t = binary({1, 1, 8, 8}, seed + 1000, 0.4);
        const double soft = 1.0 - dice_loss(p, t, 1e-9).item();
        EXPECT_NEAR(soft, metrics(confusion_counts(p, t)).dsc, 1e-6);
    }
}

TEST(Threshold, CutoffAndMonotonicity) {
    const Tensor p = Tensor::from_data({1, 1, 1, 3}, {0.5f, 0.49f, 0.9f});
    const Tensor b = threshold(p, 0.5);
    EXPECT_EQ(b.data()[0], 1.0f);
    EXPECT_EQ(b.data()[1], 0.0f);
    EXPECT_EQ(b.data()[2], 1.0f);
    const Tensor none = threshold(Tensor::zeros({1, 1, 3, 3}), 0.5);
    for (float v : none.data()) EXPECT_EQ(v, 0.0f);
    const Tensor r = random_tensor({1, 1, 16, 16}, 3, 0.0f, 1.0f);
    double prev = 1e9;
    for (double t = 0.05; t < 1.0; t += 0.05) {
        double fg = 0;
        const Tensor b_t = threshold(r, t);
        for (float v : b_t.data()) fg += v;
        EXPECT_LE(fg, prev);
        prev = fg;
    }
    EXPECT_THROW(threshold(r, 0.0), Error);
    EXPECT_THROW(threshold(r, 1.0), Error);
}

TEST(ConfusionCounts, HandCount) {
    const std::vector<float> pred{1, 1, 0, 0}, target{1, 0, 1, 0};
    EXPECT_EQ(confusion_counts(pred, target), (ConfusionCounts{1, 1, 1, 1}));
    const ConfusionCounts same = confusion_counts(target, target);
    EXPECT_EQ(same.fp, 0u);
    EXPECT_EQ(same.fn, 0u);
    const std::vector<float> inv{0, 1, 0, 1};
    const ConfusionCounts comp = confusion_counts(inv, target);
    EXPECT_EQ(comp.tp, 0u);
    EXPECT_EQ(comp.tn, 0u);
}

TEST(ConfusionCounts, RejectsNonBinaryAndMismatch) {
    const std::vector<float> a{1, 0.5f}, b{1, 0}, c{1};
    EXPECT_THROW(confusion_counts(a, b), Error);
    EXPECT_THROW(confusion_counts(b, a), Error);
    EXPECT_THROW(confusion_counts(b, c), Error);
}

TEST(ConfusionCounts, MatchesBruteForceOracle) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Tensor p = binary({1, 1, 9, 7}, seed), t = binary({1, 1, 9, 7}, seed + 50, 0.2);
        ConfusionCounts want;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const bool a = p.data()[i] == 1.0f, b = t.data()[i] == 1.0f;
            want.tp += a && b;
            want.fp += a && !b;
            want.fn += !a && b;
            want.tn += !a && !b;
        }
        const ConfusionCounts got = confusion_counts(p, t);
        EXPECT_EQ(got, want);
        EXPECT_EQ(got.total(), p.numel());
    }
}

TEST(Metrics, Substitution) {
    const Metrics m = metrics({1, 1, 1, 0});
    EXPECT_DOUBLE_EQ(m.dsc, 0.5);
    EXPECT_DOUBLE_EQ(m.iou, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.recall, 0.5);
    EXPECT_DOUBLE_EQ(m.precision, 0.5);
}

TEST(Metrics, Conventions) {
    const Metrics perfect = metrics({10, 0, 0, 5});
    EXPECT_EQ(perfect.dsc, 1.0);
    EXPECT_EQ(perfect.iou, 1.0);
    EXPECT_EQ(perfect.recall, 1.0);
    EXPECT_EQ(perfect.precision, 1.0);
    const Metrics empty = metrics({0, 0, 0, 9});
    EXPECT_EQ(empty.dsc, 1.0);
    EXPECT_EQ(empty.iou, 1.0);
    EXPECT_EQ(empty.recall, 1.0);
    EXPECT_EQ(empty.precision, 1.0);
    const Metrics spurious = metrics({0, 3, 0, 6});
    EXPECT_EQ(spurious.dsc, 0.0);
    EXPECT_EQ(spurious.iou, 0.0);
    EXPECT_EQ(spurious.recall, 0.0);
    EXPECT_EQ(spurious.precision, 0.0);
    const Metrics missed = metrics({0, 0, 4, 5});
    EXPECT_EQ(missed.dsc, 0.0);
    EXPECT_EQ(missed.precision, 0.0);
}

TEST(Metrics, DiceIouIdentity) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        const ConfusionCounts c{rng() % 50, rng() % 50, rng() % 50, rng() % 50};
        const Metrics m = metrics(c);
        EXPECT_NEAR(m.dsc, 2.0 * m.iou / (1.0 + m.iou), 1e-12);
    }
}

TEST(MetricReport, MeanOfPerImageScores) {
    MetricReport r;
    r.add("a", {1, 1, 1, 0});  // DSC 0.5
    r.add("b", {4, 0, 0, 0});  // DSC 1
    r.finalize();
    EXPECT_DOUBLE_EQ(r.mean.dsc, 0.75);
    MetricReport empty;
    EXPECT_THROW(empty.finalize(), Error);
}

TEST(MetricReport, PerImageCountsSplitTheBatch) {
    const Tensor pred = Tensor::from_data({2, 1, 1, 2}, {0.9f, 0.1f, 0.6f, 0.7f});
    const Tensor target = Tensor::from_data({2, 1, 1, 2}, {1, 0, 0, 1});
    const auto c = per_image_counts(pred, target, 0.5);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[0], (ConfusionCounts{1, 0, 0, 1}));
    EXPECT_EQ(c[1], (ConfusionCounts{1, 1, 0, 0}));
}

TEST(MetricReport, WritersUseTwoDecimalPercentages) {
    MetricReport r;
    r.add("x", {1, 1, 1, 0});
    r.add("y", {2, 0, 0, 3});
    r.finalize();
    std::ostringstream os;
    write_report_text(os, r, "test");
    EXPECT_NE(os.str().find("x\t50.00\t33.33\t50.00\t50.00"), std::string::npos) << os.str();
    EXPECT_NE(os.str().find("mean\t75.00\t66.67\t75.00\t75.00"), std::string::npos) << os.str();
    const auto path = std::filesystem::temp_directory_path() / "ardu_report.json";
    write_report_json(path, r);
    const auto j = nlohmann::json::parse(std::ifstream(path));
    EXPECT_DOUBLE_EQ(j["mean"]["dsc"].get<double>(), 75.0);
    EXPECT_DOUBLE_EQ(j["images"][0]["miou"].get<double>(), 33.33);
    EXPECT_EQ(j["images"][1]["tn"].get<int>(), 3);
    EXPECT_EQ(format_percent(1.0), "100.00");
}

}  // namespace
}  // namespace ardu
