// SPDX-License-Identifier: Apache-2.0

#include "ardu/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ardu/random.hpp"

namespace ardu {

void TrainConfig::validate() const {
    std::vector<std::string> problems;
    if (!(lr > 0.0)) problems.push_back("lr must be positive");
    if (max_epochs < 1) problems.push_back("max_epochs must be >= 1");
    if (batch_size < 1) problems.push_back("batch_size must be >= 1");
    if (early_stop_patience < 1) problems.push_back("early_stop_patience must be >= 1");
    if (lr_reduce_patience < 1) problems.push_back("lr_reduce_patience must be >= 1");
    if (!(lr_reduce_factor > 0.0 && lr_reduce_factor < 1.0)) problems.push_back("lr_reduce_factor must lie in (0,1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("betas must lie in [0,1)");
    if (!(eps > 0.0)) problems.push_back("eps must be positive");
    if (!(dice_lambda > 0.0)) problems.push_back("dice_lambda must be positive");
    if (!(aux_loss_weight >= 0.0)) problems.push_back("aux_loss_weight must be >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) problems.push_back("threshold must lie in (0,1)");
    if (problems.empty()) return;
    std::string msg = "invalid train config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw Error(msg);
}

Nadam::Nadam(std::vector<NamedTensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
    }
}

void Nadam::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

void Nadam::step(double lr) {
    for (const auto& p : params_) {
        if (!p.value.has_grad()) continue;
        for (float g : p.value.grad()) {
            if (!std::isfinite(g)) throw Error("nadam: non-finite gradient in parameter '" + p.name + "'");
        }
    }
    ++t_;
    const double t = static_cast<double>(t_);
    const double bc1 = 1.0 - std::pow(beta1_, t);
    const double bc2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor w = params_[k].value;
        const bool has = w.has_grad();
        const std::span<const float> grad = has ? std::as_const(w).grad() : std::span<const float>{};
        auto data = w.data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has ? grad[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            const double blend = beta1_ * m_hat + (1.0 - beta1_) * g / bc1;
            data[i] = static_cast<float>(data[i] - lr * blend / (std::sqrt(v_hat) + eps_));
        }
    }
}

std::pair<Tensor, Tensor> make_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                                     std::size_t end) {
    if (begin >= end || end > order.size()) throw Error("make_batch: empty or out-of-range batch");
    const ImageSample& first = data[order[begin]];
    const int h = first.height(), w = first.width();
    const int n = static_cast<int>(end - begin);
    Tensor images = Tensor::zeros({n, 3, h, w});
    Tensor masks = Tensor::zeros({n, 1, h, w});
    const std::size_t img_sz = 3 * static_cast<std::size_t>(h) * w, mask_sz = static_cast<std::size_t>(h) * w;
    for (std::size_t i = begin; i < end; ++i) {
        const ImageSample& s = data[order[i]];
        if (s.height() != h || s.width() != w) throw Error("make_batch: sample '" + s.id + "' has a different extent");
        std::copy(s.image.data().begin(), s.image.data().end(), images.data().begin() + (i - begin) * img_sz);
        std::copy(s.mask.data().begin(), s.mask.data().end(), masks.data().begin() + (i - begin) * mask_sz);
    }
    return {images, masks};
}

namespace {

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

Tensor slice_batch(const Tensor& t, int index) {
    const Shape& s = t.shape();
    const std::size_t per = t.numel() / static_cast<std::size_t>(s.n);
    std::vector<float> v(t.data().begin() + index * per, t.data().begin() + (index + 1) * per);
    return Tensor::from_data({1, s.c, s.h, s.w}, std::move(v));
}

template <typename Fn>
void for_each_batch(const Dataset& data, int batch_size, Fn&& fn) {
    if (data.empty()) throw Error("evaluation split is empty");
    if (batch_size < 1) throw Error("batch size must be >= 1");
    const auto order = iota(data.size());
    for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(data.size(), b + static_cast<std::size_t>(batch_size));
        auto [images, masks] = make_batch(data, order, b, e);
        fn(b, images, masks);
    }
}

}  // namespace

std::vector<Tensor> predict(const Model& model, const Dataset& data, int batch_size) {
    NoGradGuard guard;
    std::vector<Tensor> out;
    for_each_batch(data, batch_size, [&](std::size_t, const Tensor& images, const Tensor&) {
        const Tensor final = model.forward(images, Mode::Infer).final;
        for (int i = 0; i < images.shape().n; ++i) out.push_back(slice_batch(final, i));
    });
    return out;
}

double evaluate_loss(const Model& model, const Dataset& data, double lambda, int batch_size) {
    NoGradGuard guard;
    double total = 0.0;
    for_each_batch(data, batch_size, [&](std::size_t, const Tensor& images, const Tensor& masks) {
        const Tensor final = model.forward(images, Mode::Infer).final;
        for (int i = 0; i < images.shape().n; ++i) {
            total += dice_loss(slice_batch(final, i), slice_batch(masks, i), lambda).item();
        }
    });
    return total / static_cast<double>(data.size());
}

MetricReport evaluate(const Model& model, const Dataset& data, double threshold, int batch_size) {
    NoGradGuard guard;
    MetricReport report;
    for_each_batch(data, batch_size, [&](std::size_t begin, const Tensor& images, const Tensor& masks) {
        const Tensor final = model.forward(images, Mode::Infer).final;
        const auto counts = per_image_counts(final, masks, threshold);
        for (std::size_t i = 0; i < counts.size(); ++i) report.add(data[begin + i].id, counts[i]);
    });
    report.finalize();
    return report;
}

TrainHistory train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.empty()) throw Error("train: training split is empty");
    if (val_set.empty()) throw Error("train: validation split is empty");

    Nadam opt(model.store().parameters(), config.beta1, config.beta2, config.eps);
    Model best = model.clone();
    double best_loss = INFINITY;
    double lr = config.lr;
    int since_improvement = 0;
    int since_reduction = 0;
    TrainHistory history;
    std::vector<std::size_t> order = iota(train_set.size());
    const auto batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(config.seed, fnv1a("shuffle"), static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        bool diverged = false;
        for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::size_t e = std::min(order.size(), b + batch);
            // A trailing single-sample batch would give degenerate batch statistics.
            if (e - b < 2 && b > 0) break;
            auto [images, masks] = make_batch(train_set, order, b, e);
            opt.zero_grad();
            const ForwardOutput out = model.forward(images, Mode::Train);
            Tensor loss = dice_loss(out.final, masks, config.dice_lambda);
            if (config.aux_loss_weight > 0.0) {
                const Tensor aux = ops::add(dice_loss(out.out1, masks, config.dice_lambda),
                                            dice_loss(out.out2, masks, config.dice_lambda));
                loss = ops::add(loss, ops::scale(aux, static_cast<float>(config.aux_loss_weight)));
            }
            const float value = loss.item();
            if (!std::isfinite(value)) {
                history.stop_reason = "non-finite loss at epoch " + std::to_string(epoch);
                diverged = true;
                break;
            }
            loss.backward();
            try {
                opt.step(lr);
            } catch (const Error& err) {
                history.stop_reason = std::string(err.what()) + " at epoch " + std::to_string(epoch);
                diverged = true;
                break;
            }
            loss_sum += value;
            ++batches;
        }
        if (diverged) {
            history.diverged = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        rec.val_loss = evaluate_loss(model, val_set, config.dice_lambda);
        rec.val_dsc = evaluate(model, val_set, config.threshold).mean.dsc;
        rec.lr = lr;
        if (!std::isfinite(rec.val_loss)) {
            history.diverged = true;
            history.stop_reason = "non-finite validation loss at epoch " + std::to_string(epoch);
            break;
        }
        rec.improved = rec.val_loss < best_loss - config.min_delta;
        if (rec.improved) {
            best_loss = rec.val_loss;
            best.assign_from(model);
            history.best_epoch = epoch;
            since_improvement = 0;
            since_reduction = 0;
        } else {
            ++since_improvement;
            ++since_reduction;
        }
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (since_improvement >= config.early_stop_patience) {
            history.stop_reason = "early stop after " + std::to_string(since_improvement) + " epochs without improvement";
            break;
        }
        if (since_reduction >= config.lr_reduce_patience) {
            lr *= config.lr_reduce_factor;
            since_reduction = 0;
        }
    }
    if (history.stop_reason.empty()) history.stop_reason = "reached max_epochs";
    model.assign_from(best);
    return history;
}

void write_history(const std::filesystem::path& path, const TrainHistory& history) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write history '" + path.string() + "'");
    for (const auto& r : history.epochs) {
        const nlohmann::json j = {{"epoch", r.epoch},       {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
                                  {"val_dsc", r.val_dsc},   {"lr", r.lr},                 {"improved", r.improved}};
        os << j.dump() << '\n';
    }
    nlohmann::json summary = {{"summary", true},
                              {"epochs", history.epochs.size()},
                              {"best_epoch", history.best_epoch},
                              {"diverged", history.diverged},
                              {"stop_reason", history.stop_reason}};
    if (const EpochRecord* b = history.best()) {
        summary["best_val_loss"] = b->val_loss;
        summary["best_val_dsc"] = b->val_dsc;
    }
    os << summary.dump() << '\n';
    if (!os) throw Error("write failed for history '" + path.string() + "'");
}

std::string history_summary(const TrainHistory& history) {
    std::string s = std::to_string(history.epochs.size()) + " epochs, best epoch " + std::to_string(history.best_epoch);
    if (const EpochRecord* b = history.best()) {
        s += " (val loss " + std::to_string(b->val_loss) + ", val DSC " + format_percent(b->val_dsc) + "%)";
    }
    s += ", " + history.stop_reason;
    return s;
}

}  // namespace ardu
