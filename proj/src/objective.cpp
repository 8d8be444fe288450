// SPDX-License-Identifier: Apache-2.0

#include "ardu/objective.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

namespace ardu {

void DiceConfig::validate() const {
    if (!(lambda > 0.0)) throw Error("dice: lambda must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error("dice: threshold must lie in (0,1)");
}

Tensor dice_loss(const Tensor& pred, const Tensor& target, double lambda) {
    if (!pred.defined() || !target.defined()) throw Error("dice_loss: undefined input");
    if (!(pred.shape() == target.shape())) {
        throw Error("dice_loss: shape mismatch between prediction " + pred.shape().str() + " and target " +
                    target.shape().str());
    }
    if (!(lambda > 0.0)) throw Error("dice_loss: lambda must be positive");
    const auto p = pred.data();
    const auto t = target.data();
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += static_cast<double>(p[i]) * t[i];
        sp += p[i];
        st += t[i];
    }
    const double num = 2.0 * inter + lambda;
    const double den = sp + st + lambda;
    const float loss = static_cast<float>(1.0 - num / den);
    auto p_impl = pred.impl();
    auto t_impl = target.impl();
    return detail::make_result({1, 1, 1, 1}, {loss}, OpKind::DiceLoss, {&pred},
                               [p_impl, t_impl, num, den](const detail::TensorImpl& y) {
                                   // dL/dp_i = (num - 2 t_i den) / den^2
                                   const double g = y.grad[0];
                                   const double inv = 1.0 / (den * den);
                                   auto& dp = p_impl->grad_buffer();
                                   const auto& tv = t_impl->data;
                                   for (std::size_t i = 0; i < dp.size(); ++i) {
                                       dp[i] += static_cast<float>(g * (num - 2.0 * tv[i] * den) * inv);
                                   }
                               });
}

Tensor threshold(const Tensor& pred, double t) {
    if (!(t > 0.0 && t < 1.0)) throw Error("threshold: cutoff must lie in (0,1)");
    std::vector<float> out(pred.numel());
    const auto p = pred.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] >= t ? 1.0f : 0.0f;
    return Tensor::from_data(pred.shape(), std::move(out));
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

ConfusionCounts confusion_counts(std::span<const float> pred_bin, std::span<const float> target) {
    if (pred_bin.size() != target.size()) {
        throw Error("confusion_counts: size mismatch (" + std::to_string(pred_bin.size()) + " vs " +
                    std::to_string(target.size()) + ")");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred_bin.size(); ++i) {
        const float p = pred_bin[i];
        const float t = target[i];
        if ((p != 0.0f && p != 1.0f) || (t != 0.0f && t != 1.0f)) {
            throw Error("confusion_counts: non-binary value at index " + std::to_string(i));
        }
        if (p == 1.0f) {
            (t == 1.0f ? c.tp : c.fp)++;
        } else {
            (t == 1.0f ? c.fn : c.tn)++;
        }
    }
    return c;
}

ConfusionCounts confusion_counts(const Tensor& pred_bin, const Tensor& target) {
    if (!(pred_bin.shape() == target.shape())) {
        throw Error("confusion_counts: shape mismatch between " + pred_bin.shape().str() + " and " +
                    target.shape().str());
    }
    return confusion_counts(pred_bin.data(), target.data());
}

Metrics metrics(const ConfusionCounts& c) {
    const bool both_empty = c.tp == 0 && c.fp == 0 && c.fn == 0;
    auto ratio = [&](double num, std::uint64_t den) {
        if (den == 0) return both_empty ? 1.0 : 0.0;
        return num / static_cast<double>(den);
    };
    Metrics m;
    m.dsc = ratio(2.0 * c.tp, (c.tp + c.fp) + (c.tp + c.fn));
    m.iou = ratio(static_cast<double>(c.tp), c.tp + c.fp + c.fn);
    m.recall = ratio(static_cast<double>(c.tp), c.tp + c.fn);
    m.precision = ratio(static_cast<double>(c.tp), c.tp + c.fp);
    return m;
}

void MetricReport::add(std::string id, const ConfusionCounts& counts) {
    images.push_back({std::move(id), counts, metrics(counts)});
}

void MetricReport::finalize() {
    if (images.empty()) throw Error("metric report: no images scored");
    Metrics sum;
    for (const auto& im : images) {
        sum.dsc += im.scores.dsc;
        sum.iou += im.scores.iou;
        sum.recall += im.scores.recall;
        sum.precision += im.scores.precision;
    }
    const double n = static_cast<double>(images.size());
    mean = {sum.dsc / n, sum.iou / n, sum.recall / n, sum.precision / n};
}

std::vector<ConfusionCounts> per_image_counts(const Tensor& pred, const Tensor& target, double t) {
    if (!(pred.shape() == target.shape())) {
        throw Error("per_image_counts: shape mismatch between " + pred.shape().str() + " and " + target.shape().str());
    }
    const Tensor bin = threshold(pred, t);
    const std::size_t per = pred.numel() / static_cast<std::size_t>(pred.shape().n);
    std::vector<ConfusionCounts> out;
    for (int n = 0; n < pred.shape().n; ++n) {
        out.push_back(confusion_counts(bin.data().subspan(n * per, per), target.data().subspan(n * per, per)));
    }
    return out;
}

std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

void write_report_text(std::ostream& os, const MetricReport& report, const std::string& title) {
    if (!title.empty()) os << "# " << title << "\n";
    os << "id\tDSC\tmIoU\tRecall\tPrecision\n";
    for (const auto& im : report.images) {
        os << im.id << '\t' << format_percent(im.scores.dsc) << '\t' << format_percent(im.scores.iou) << '\t'
           << format_percent(im.scores.recall) << '\t' << format_percent(im.scores.precision) << '\n';
    }
    os << "mean\t" << format_percent(report.mean.dsc) << '\t' << format_percent(report.mean.iou) << '\t'
       << format_percent(report.mean.recall) << '\t' << format_percent(report.mean.precision) << '\n';
}

void write_report_json(const std::filesystem::path& path, const MetricReport& report) {
    auto pct = [](double v) { return std::round(v * 10000.0) / 100.0; };
    auto obj = [&](const Metrics& m) {
        return nlohmann::json{{"dsc", pct(m.dsc)}, {"miou", pct(m.iou)}, {"recall", pct(m.recall)},
                              {"precision", pct(m.precision)}};
    };
    nlohmann::json j;
    j["mean"] = obj(report.mean);
    j["count"] = report.images.size();
    auto& arr = j["images"] = nlohmann::json::array();
    for (const auto& im : report.images) {
        nlohmann::json e = obj(im.scores);
        e["id"] = im.id;
        e["tp"] = im.counts.tp;
        e["fp"] = im.counts.fp;
        e["fn"] = im.counts.fn;
        e["tn"] = im.counts.tn;
        arr.push_back(std::move(e));
    }
    std::ofstream os(path);
    if (!os) throw Error("cannot write report '" + path.string() + "'");
    os << j.dump(2) << '\n';
    if (!os) throw Error("write failed for report '" + path.string() + "'");
}

}  // namespace ardu
