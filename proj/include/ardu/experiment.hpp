// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiment drivers shared by the command-line tool and the
// acceptance checks: data preparation, a single training run, the four-arm
// ablation, and the cost report.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ardu/config.hpp"

namespace ardu {

/// Synthetic splits at the configured extent, drawn and split with `config.seed`.
Splits generate_splits(const RunConfig& config);
/// Reads `config.data_dir` when set, otherwise generates.
Splits load_or_generate(const RunConfig& config);

/// Colour constancy (when enabled), then augmentation of the training split,
/// then per-sample centering.
Splits prepare_splits(const Splits& raw, const RunConfig& config);

struct RunResult {
    Model model;
    TrainHistory history;
    MetricReport val;
    MetricReport test;  // empty when the test split is empty
};

/// Builds the model from `config.seed`, trains on prepared splits, and scores
/// the restored best model on val and test.
RunResult run_training(const Splits& prepared, const RunConfig& config, const EpochCallback& on_epoch = {});

struct AblationArm {
    std::string name;
    Variant variant;
    bool residual;
    bool color_constancy;
};

/// The four distinct arms: half vs full attention (no residual, with CC), then
/// full attention without CC, and with residual blocks plus CC.
std::vector<AblationArm> ablation_arms();

struct ArmRun {
    std::uint64_t seed = 0;
    double val_dsc = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
    Metrics val;
};

struct ArmResult {
    AblationArm arm;
    std::vector<ArmRun> runs;
    Metrics mean_val;  // averaged over seeds
    double mean_val_dsc() const { return mean_val.dsc; }
    double median_best_epoch() const;
};

struct AblationCheck {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;  // passes when lhs >= rhs
    bool pass() const { return lhs >= rhs; }
};

struct AblationReport {
    std::vector<ArmResult> arms;  // in ablation_arms() order
    std::vector<AblationCheck> checks;
    const ArmResult& arm(const std::string& name) const;
};

inline constexpr double kAblationDscSlack = 0.02;
inline constexpr double kAblationEpochSlack = 3.0;

using ArmCallback = std::function<void(const AblationArm&, const ArmRun&)>;

/// Trains every arm for each of `seeds` training seeds on the same raw splits.
AblationReport run_ablation(const Splits& raw, const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            const ArmCallback& on_run = {});

/// Two-panel table: the attention comparison, then the CC/residual comparison.
void write_ablation_table(std::ostream& os, const AblationReport& report);
void write_ablation_json(const std::filesystem::path& path, const AblationReport& report);

/// Published cost of each variant at full width and 192x256.
struct ReferenceCost {
    double params_m;
    double gflops;
};
ReferenceCost reference_cost(Variant variant);

struct CostReport {
    ModelCost cost;
    double params_m = 0.0;
    double gflops = 0.0;
    ReferenceCost reference{};
    double params_ratio = 0.0;  // measured / reference
    double gflops_ratio = 0.0;
};

/// Relative deviation tolerated before `inspect` flags a mismatch.
inline constexpr double kCostTolerance = 0.20;

CostReport inspect_cost(const ModelConfig& config);
void write_cost_text(std::ostream& os, const ModelConfig& config, const CostReport& report);

}  // namespace ardu
