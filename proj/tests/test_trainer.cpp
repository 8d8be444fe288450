// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "ardu/pipeline.hpp"
#include "ardu/trainer.hpp"
#include "test_util.hpp"

namespace ardu {
namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.width_mult = 1.0 / 32;
    c.encoder2_widths = {4, 4, 8, 8};
    c.decoder_widths = {8, 8, 4, 4};
    c.aspp_out = 4;
    c.aspp_rates = {1, 2};
    c.se_ratio = 2;
    c.height = 32;
    c.width = 32;
    return c;
}

Splits tiny_data(std::uint64_t seed = 1) {
    SyntheticOptions opt;
    opt.height = opt.width = 32;
    return split_dataset(prepare_for_model(gen_synthetic(30, opt, seed), true), {});
}

// Scalar Nadam written out from the update equations.
struct ScalarNadam {
    double m = 0, v = 0, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    int t = 0;
    double step(double w, double g, double lr) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        return w - lr * (b1 * mh + (1 - b1) * g / (1 - std::pow(b1, t))) / (std::sqrt(vh) + eps);
    }
};

TEST(Nadam, ZeroGradientLeavesParametersUnchanged) {
    Tensor w = Tensor::from_data({1, 1, 1, 3}, {1.0f, -2.0f, 3.0f}, true);
    Nadam opt({{"w", w}});
    for (int i = 0; i < 3; ++i) {
        w.grad();  // allocates a zero gradient
        opt.step(1e-2);
    }
    EXPECT_EQ(w.data()[0], 1.0f);
    EXPECT_EQ(w.data()[1], -2.0f);
    EXPECT_EQ(w.data()[2], 3.0f);
}

TEST(Nadam, MatchesScalarOracleOnQuadratic) {
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0f}, true);
    Nadam opt({{"w", w}});
    ScalarNadam ref;
    double wr = 1.0;
    for (int t = 0; t < 5; ++t) {
        opt.zero_grad();
        ops::sum(ops::mul(w, w)).backward();
        EXPECT_FLOAT_EQ(w.grad()[0], static_cast<float>(2.0 * w.data()[0]));
        opt.step(1e-3);
        wr = ref.step(wr, 2.0 * static_cast<float>(wr), 1e-3);
        EXPECT_NEAR(w.data()[0], wr, 1e-6) << "step " << t + 1;
    }
}

TEST(Nadam, DescendsOnQuadratic) {
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0f}, true);
    Nadam opt({{"w", w}});
    double prev = 1.0;
    for (int t = 0; t < 200; ++t) {
        opt.zero_grad();
        ops::sum(ops::mul(w, w)).backward();
        opt.step(1e-3);
        const double f = static_cast<double>(w.data()[0]) * w.data()[0];
        EXPECT_LT(f, prev);
        prev = f;
    }
}

TEST(Nadam, NonFiniteGradientNamesParameterAndChangesNothing) {
    Tensor a = Tensor::from_data({1, 1, 1, 1}, {1.0f}, true);
    Tensor b = Tensor::from_data({1, 1, 1, 1}, {2.0f}, true);
    Nadam opt({{"alpha", a}, {"beta", b}});
    a.grad()[0] = 1.0f;
    b.grad()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        opt.step(0.1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
    }
    EXPECT_EQ(a.data()[0], 1.0f);
    EXPECT_EQ(opt.steps(), 0);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.lr_reduce_factor = 1.0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.early_stop_patience = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.lr = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.aux_loss_weight = -0.5;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Evaluate, ConstantHalfPredictorIsAllForeground) {
    // Zero final-head weights and bias give sigmoid(0) = 0.5 everywhere.
    Model m = Model::build(tiny(), 1);
    for (float& v : Tensor(m.final_head.weight).data()) v = 0.0f;
    for (float& v : Tensor(m.final_head.bias).data()) v = 0.0f;
    const Splits s = tiny_data();
    const MetricReport r = evaluate(m, s.test, 0.5);
    ASSERT_EQ(r.images.size(), s.test.size());
    double dsc = 0;
    for (std::size_t i = 0; i < s.test.size(); ++i) {
        std::uint64_t fg = 0;
        for (float v : s.test[i].mask.data()) fg += v == 1.0f;
        const ConfusionCounts want{fg, s.test[i].mask.numel() - fg, 0, 0};
        EXPECT_EQ(r.images[i].counts, want);
        dsc += 2.0 * fg / (fg + s.test[i].mask.numel());
    }
    EXPECT_NEAR(r.mean.dsc, dsc / s.test.size(), 1e-12);
}

TEST(Evaluate, RepeatableAndDoesNotMutate) {
    const Model m = Model::build(tiny(), 2);
    const Splits s = tiny_data();
    const auto stats_before = m.store().stats()[0].stats->mean;
    const MetricReport a = evaluate(m, s.val), b = evaluate(m, s.val);
    for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].counts, b.images[i].counts);
    EXPECT_EQ(stats_before, m.store().stats()[0].stats->mean);
    EXPECT_EQ(evaluate_loss(m, s.val), evaluate_loss(m, s.val));
    EXPECT_THROW(evaluate(m, Dataset{}), Error);
}

TEST(Train, HistoryInvariants) {
    Model m = Model::build(tiny(), 3);
    const Splits s = tiny_data();
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.max_epochs = 12;
    cfg.early_stop_patience = 3;
    cfg.lr_reduce_patience = 1;
    cfg.seed = 9;
    const TrainHistory h = train(m, s.train, s.val, cfg);
    ASSERT_FALSE(h.epochs.empty());
    EXPECT_LE(h.epochs.size(), 12u);
    EXPECT_FALSE(h.diverged);
    ASSERT_GE(h.best_epoch, 1);
    const double best_loss = h.epochs[h.best_epoch - 1].val_loss;
    for (std::size_t i = 0; i < h.epochs.size(); ++i) {
        EXPECT_EQ(h.epochs[i].epoch, static_cast<int>(i) + 1);
        EXPECT_GE(h.epochs[i].val_loss, best_loss);
        if (i > 0) {
            const double r = h.epochs[i].lr / h.epochs[i - 1].lr;
            EXPECT_TRUE(r == 1.0 || std::abs(r - cfg.lr_reduce_factor) < 1e-12) << r;
        }
    }
    // No more than early_stop_patience non-improving epochs after the best one.
    EXPECT_LE(static_cast<int>(h.epochs.size()) - h.best_epoch, cfg.early_stop_patience);
    // The returned model is the best checkpoint.
    EXPECT_NEAR(evaluate_loss(m, s.val), best_loss, 1e-6);
}

TEST(Train, FixedSeedIsBitReproducible) {
    const Splits s = tiny_data();
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.max_epochs = 2;
    cfg.seed = 5;
    Model a = Model::build(tiny(), 4), b = Model::build(tiny(), 4);
    const TrainHistory ha = train(a, s.train, s.val, cfg), hb = train(b, s.train, s.val, cfg);
    ASSERT_EQ(ha.epochs.size(), hb.epochs.size());
    for (std::size_t i = 0; i < ha.epochs.size(); ++i) {
        EXPECT_EQ(ha.epochs[i].train_loss, hb.epochs[i].train_loss);
        EXPECT_EQ(ha.epochs[i].val_loss, hb.epochs[i].val_loss);
        EXPECT_EQ(ha.epochs[i].val_dsc, hb.epochs[i].val_dsc);
    }
    for (std::size_t i = 0; i < a.store().parameters().size(); ++i) {
        EXPECT_EQ(testing::max_abs_diff(a.store().parameters()[i].value.data(), b.store().parameters()[i].value.data()),
                  0.0f);
    }
}

TEST(Train, AuxiliaryLossChangesTheUpdate) {
    const Splits s = tiny_data();
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.max_epochs = 1;
    Model a = Model::build(tiny(), 4), b = Model::build(tiny(), 4);
    const TrainHistory ha = train(a, s.train, s.val, cfg);
    cfg.aux_loss_weight = 0.5;
    const TrainHistory hb = train(b, s.train, s.val, cfg);
    // Three dice terms in [0,1] weighted 1, 0.5, 0.5.
    EXPECT_GT(hb.epochs[0].train_loss, ha.epochs[0].train_loss);
    EXPECT_LE(hb.epochs[0].train_loss, 2.0);
    EXPECT_GT(testing::max_abs_diff(a.head1.weight.data(), b.head1.weight.data()), 0.0f);
}

TEST(Train, DivergenceKeepsLastGoodState) {
    Model m = Model::build(tiny(), 6);
    Splits s = tiny_data();
    TrainConfig cfg;
    cfg.max_epochs = 3;
    // A NaN pixel poisons the first forward pass.
    s.train[0].image.data()[0] = std::numeric_limits<float>::quiet_NaN();
    const Model before = m.clone();
    const TrainHistory h = train(m, s.train, s.val, cfg);
    EXPECT_TRUE(h.diverged);
    EXPECT_TRUE(h.epochs.empty());
    EXPECT_NE(h.stop_reason.find("non-finite"), std::string::npos) << h.stop_reason;
    for (std::size_t i = 0; i < m.store().parameters().size(); ++i) {
        EXPECT_EQ(testing::max_abs_diff(m.store().parameters()[i].value.data(),
                                        before.store().parameters()[i].value.data()),
                  0.0f);
    }
}

TEST(Train, RejectsEmptySplits) {
    Model m = Model::build(tiny(), 1);
    const Splits s = tiny_data();
    EXPECT_THROW(train(m, {}, s.val, {}), Error);
    EXPECT_THROW(train(m, s.train, {}, {}), Error);
}

TEST(History, WrittenAsOneRecordPerEpochPlusSummary) {
    TrainHistory h;
    h.epochs = {{1, 0.5, 0.4, 0.6, 1e-4, true}, {2, 0.3, 0.45, 0.62, 1e-4, false}};
    h.best_epoch = 1;
    h.stop_reason = "reached max_epochs";
    const auto path = std::filesystem::temp_directory_path() / "ardu_history.jsonl";
    write_history(path, h);
    std::ifstream is(path);
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(is, line)) rows.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1]["epoch"], 2);
    EXPECT_EQ(rows[2]["summary"], true);
    EXPECT_EQ(rows[2]["best_epoch"], 1);
}

}  // namespace
}  // namespace ardu
