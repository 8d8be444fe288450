// SPDX-License-Identifier: Apache-2.0
//
// Nadam optimisation with early stopping and reduce-on-plateau scheduling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ardu/dataio.hpp"
#include "ardu/model.hpp"
#include "ardu/objective.hpp"

namespace ardu {

struct TrainConfig {
    double lr = 1e-4;
    int max_epochs = 40;
    int batch_size = 4;
    int early_stop_patience = 5;
    double lr_reduce_factor = 0.1;
    int lr_reduce_patience = 3;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double dice_lambda = 1.0;
    double aux_loss_weight = 0.0;  // weight of the out1 and out2 dice terms; 0 trains on final only
    double min_delta = 1e-5;  // an epoch improves when val loss drops by more than this
    double threshold = 0.5;

    void validate() const;
};

class Nadam {
public:
    Nadam(std::vector<NamedTensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// One update from the accumulated gradients. Parameters without a
    /// gradient are treated as having a zero gradient. Throws, before touching
    /// any value, when a gradient is non-finite.
    void step(double lr);
    void zero_grad();
    std::int64_t steps() const { return t_; }

private:
    std::vector<NamedTensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dsc = 0.0;
    double lr = 0.0;
    bool improved = false;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;  // 1-based, 0 when no epoch completed
    bool diverged = false;
    std::string stop_reason;

    const EpochRecord* best() const { return best_epoch > 0 ? &epochs[best_epoch - 1] : nullptr; }
};

/// One JSON object per epoch followed by a summary object.
void write_history(const std::filesystem::path& path, const TrainHistory& history);
std::string history_summary(const TrainHistory& history);

/// Stacks samples [begin, end) of `data` in the given order into (B,3,H,W) images and (B,1,H,W) masks.
std::pair<Tensor, Tensor> make_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                                     std::size_t end);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place. On return the model holds the parameters and statistics
/// of the epoch with the lowest validation loss (or its initial state when
/// no epoch completed). Inputs are expected to be preprocessed already.
TrainHistory train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

/// Mean per-image Dice loss in inference mode.
double evaluate_loss(const Model& model, const Dataset& data, double lambda = 1.0, int batch_size = 8);

/// Per-image and mean metrics of the final output in inference mode.
MetricReport evaluate(const Model& model, const Dataset& data, double threshold = 0.5, int batch_size = 8);

/// Final-output probabilities for each sample, (1,1,H,W) each.
std::vector<Tensor> predict(const Model& model, const Dataset& data, int batch_size = 8);

}  // namespace ardu
