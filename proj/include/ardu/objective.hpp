// SPDX-License-Identifier: Apache-2.0
//
// Soft Dice loss and the overlap metrics used for reporting.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ardu/tensor.hpp"

namespace ardu {

struct DiceConfig {
    double lambda = 1.0;     // smoothing term
    double threshold = 0.5;  // binarization cutoff for metrics

    void validate() const;
};

/// 1 - (2 sum(p t) + lambda) / (sum p + sum t + lambda), summed over every
/// element of the batch. Differentiable with respect to `pred` only.
Tensor dice_loss(const Tensor& pred, const Tensor& target, double lambda = 1.0);

/// Pixel >= t becomes 1, otherwise 0. No gradient.
Tensor threshold(const Tensor& pred, double t);

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

/// Both inputs must contain only 0 and 1.
ConfusionCounts confusion_counts(std::span<const float> pred_bin, std::span<const float> target);
ConfusionCounts confusion_counts(const Tensor& pred_bin, const Tensor& target);

struct Metrics {
    double dsc = 0.0;
    double iou = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

/// A zero denominator scores 1 when both masks are empty (TP = FP = FN = 0)
/// and 0 otherwise.
Metrics metrics(const ConfusionCounts& c);

struct ImageScore {
    std::string id;
    ConfusionCounts counts;
    Metrics scores;
};

struct MetricReport {
    std::vector<ImageScore> images;
    Metrics mean;  // unweighted mean over images

    void add(std::string id, const ConfusionCounts& counts);
    void finalize();
};

/// Scores each image of a (N,1,H,W) batch of probabilities against binary targets.
std::vector<ConfusionCounts> per_image_counts(const Tensor& pred, const Tensor& target, double t);

/// Line-oriented report, percentages with two decimals.
void write_report_text(std::ostream& os, const MetricReport& report, const std::string& title = "");
void write_report_json(const std::filesystem::path& path, const MetricReport& report);
std::string format_percent(double v);

}  // namespace ardu
