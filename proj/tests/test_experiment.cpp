// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "ardu/experiment.hpp"
#include "test_util.hpp"

namespace ardu {
namespace {

using testing::max_abs_diff;

RunConfig tiny_run() {
    RunConfig c = RunConfig::toy();
    c.model.height = c.model.width = 32;
    c.samples = 20;
    c.seed = 5;
    return c;
}

TEST(Experiment, GenerateIsDeterministicAndSized) {
    const RunConfig c = tiny_run();
    const Splits a = generate_splits(c), b = generate_splits(c);
    EXPECT_EQ(a.train.size(), 16u);
    EXPECT_EQ(a.val.size(), 2u);
    EXPECT_EQ(a.test.size(), 2u);
    EXPECT_EQ(a.train[0].image.shape(), (Shape{1, 3, 32, 32}));
    for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].id, b.train[i].id);
}

TEST(Experiment, PrepareAppliesBalanceThenAugmentThenCentering) {
    RunConfig c = tiny_run();
    c.augment.expansion = 3;
    const Splits raw = generate_splits(c);
    const Splits p = prepare_splits(raw, c);
    ASSERT_EQ(p.train.size(), 3 * raw.train.size());
    ASSERT_EQ(p.val.size(), raw.val.size());
    const Tensor want_val = normalize_center(shades_of_gray(raw.val[0].image, c.cc)).image;
    EXPECT_LT(max_abs_diff(p.val[0].image.data(), want_val.data()), 1e-6f);
    // Originals lead the expanded training split.
    const Tensor want_train = normalize_center(shades_of_gray(raw.train[0].image, c.cc)).image;
    EXPECT_LT(max_abs_diff(p.train[0].image.data(), want_train.data()), 1e-6f);
    // Centering runs last, so every training image has zero mean.
    for (const auto& s : p.train) {
        double mean = 0;
        for (float v : s.image.data()) mean += v;
        EXPECT_NEAR(mean / s.image.numel(), 0.0, 1e-4) << s.id;
    }
    c.color_constancy = false;
    const Splits q = prepare_splits(raw, c);
    const Tensor plain = normalize_center(raw.val[0].image).image;
    EXPECT_LT(max_abs_diff(q.val[0].image.data(), plain.data()), 1e-6f);
}

TEST(Experiment, RunTrainingRejectsWrongExtent) {
    RunConfig c = tiny_run();
    const Splits p = prepare_splits(generate_splits(c), c);
    c.model.height = c.model.width = 64;
    EXPECT_THROW(run_training(p, c), Error);
}

TEST(Ablation, ArmsAndMedian) {
    const auto arms = ablation_arms();
    ASSERT_EQ(arms.size(), 4u);
    EXPECT_EQ(arms[0].variant, Variant::HalfAttention);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(arms[i].variant, Variant::FullAttention);
    EXPECT_FALSE(arms[2].color_constancy);
    EXPECT_TRUE(arms[3].residual);
    EXPECT_FALSE(arms[1].residual);

    ArmResult r{arms[0], {}, {}};
    for (int e : {9, 3, 5}) r.runs.push_back({0, 0.0, e, e, {}});
    EXPECT_EQ(r.median_best_epoch(), 5.0);
    r.runs.push_back({0, 0.0, 20, 20, {}});
    EXPECT_EQ(r.median_best_epoch(), 7.0);
}

TEST(Ablation, ChecksUseStatedSlacks) {
    EXPECT_TRUE((AblationCheck{"x", 0.90, 0.92 - kAblationDscSlack}).pass());
    EXPECT_FALSE((AblationCheck{"x", 0.8999, 0.92 - kAblationDscSlack}).pass());
    EXPECT_TRUE((AblationCheck{"x", 20 + kAblationEpochSlack, 23}).pass());
    EXPECT_FALSE((AblationCheck{"x", 20 + kAblationEpochSlack, 24}).pass());
}

TEST(Inspect, FullSizeCostNearReference) {
    const CostReport r = inspect_cost(ModelConfig::full_size());
    EXPECT_EQ(r.cost.params, 35419773u);
    EXPECT_DOUBLE_EQ(r.reference.params_m, 36.5);
    EXPECT_NEAR(r.params_ratio, 35.419773 / 36.5, 1e-12);
    EXPECT_LT(std::abs(r.params_ratio - 1.0), kCostTolerance);
    EXPECT_LT(std::abs(r.gflops_ratio - 1.0), kCostTolerance);
    std::ostringstream os;
    write_cost_text(os, ModelConfig::full_size(), r);
    EXPECT_NE(os.str().find("35419773"), std::string::npos);
    EXPECT_EQ(os.str().find("note"), std::string::npos);
}

}  // namespace
}  // namespace ardu
