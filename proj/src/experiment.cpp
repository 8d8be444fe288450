// SPDX-License-Identifier: Apache-2.0

#include "ardu/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "ardu/random.hpp"

namespace ardu {

Splits generate_splits(const RunConfig& config) {
    SyntheticOptions opt;
    opt.height = config.model.height;
    opt.width = config.model.width;
    SplitSpec spec = config.split;
    spec.seed = config.seed;
    return split_dataset(gen_synthetic(config.samples, opt, config.seed), spec);
}

Splits load_or_generate(const RunConfig& config) {
    return config.data_dir.empty() ? generate_splits(config) : read_dataset(config.data_dir);
}

Splits prepare_splits(const Splits& raw, const RunConfig& config) {
    auto balance = [&](const Dataset& d) {
        if (!config.color_constancy) return d;
        Dataset out;
        out.reserve(d.size());
        for (const auto& s : d) out.push_back({shades_of_gray(s.image, config.cc), s.mask, s.id});
        return out;
    };
    const Dataset train = augment_expand(balance(raw.train), config.augment, derive_seed(config.seed, fnv1a("augment")));
    return {prepare_for_model(train, false), prepare_for_model(balance(raw.val), false),
            prepare_for_model(balance(raw.test), false)};
}

RunResult run_training(const Splits& prepared, const RunConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    for (const Dataset* d : {&prepared.train, &prepared.val}) {
        for (const auto& s : *d) {
            if (s.image.shape().h != config.model.height || s.image.shape().w != config.model.width) {
                throw Error("run: sample '" + s.id + "' has extent " + s.image.shape().str() +
                            " but the model expects " + std::to_string(config.model.height) + "x" +
                            std::to_string(config.model.width));
            }
        }
    }
    TrainConfig tc = config.train;
    tc.seed = config.seed;
    RunResult r{Model::build(config.model, config.seed), {}, {}, {}};
    r.history = train(r.model, prepared.train, prepared.val, tc, on_epoch);
    r.val = evaluate(r.model, prepared.val, tc.threshold);
    if (!prepared.test.empty()) r.test = evaluate(r.model, prepared.test, tc.threshold);
    return r;
}

std::vector<AblationArm> ablation_arms() {
    return {
        {"half_attention", Variant::HalfAttention, false, true},
        {"full_attention", Variant::FullAttention, false, true},
        {"full_attention_no_cc", Variant::FullAttention, false, false},
        {"full_attention_residual", Variant::FullAttention, true, true},
    };
}

double ArmResult::median_best_epoch() const {
    if (runs.empty()) return 0.0;
    std::vector<int> e;
    for (const auto& r : runs) e.push_back(r.best_epoch);
    std::sort(e.begin(), e.end());
    const std::size_t n = e.size();
    return n % 2 ? e[n / 2] : 0.5 * (e[n / 2 - 1] + e[n / 2]);
}

const ArmResult& AblationReport::arm(const std::string& name) const {
    for (const auto& a : arms) {
        if (a.arm.name == name) return a;
    }
    throw Error("ablation: no arm named '" + name + "'");
}

AblationReport run_ablation(const Splits& raw, const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            const ArmCallback& on_run) {
    if (seeds.empty()) throw Error("ablation: at least one seed is required");
    AblationReport report;
    for (const AblationArm& arm : ablation_arms()) {
        RunConfig cfg = base;
        cfg.model.variant = arm.variant;
        cfg.model.residual = arm.residual;
        cfg.color_constancy = arm.color_constancy;
        ArmResult result{arm, {}, {}};
        for (std::uint64_t seed : seeds) {
            cfg.seed = seed;
            const RunResult r = run_training(prepare_splits(raw, cfg), cfg);
            ArmRun run;
            run.seed = seed;
            run.val = r.val.mean;
            run.val_dsc = r.val.mean.dsc;
            run.best_epoch = r.history.best_epoch;
            run.epochs_run = static_cast<int>(r.history.epochs.size());
            result.runs.push_back(run);
            if (on_run) on_run(arm, run);
        }
        const double n = static_cast<double>(result.runs.size());
        for (const auto& r : result.runs) {
            result.mean_val.dsc += r.val.dsc / n;
            result.mean_val.iou += r.val.iou / n;
            result.mean_val.recall += r.val.recall / n;
            result.mean_val.precision += r.val.precision / n;
        }
        report.arms.push_back(std::move(result));
    }
    const ArmResult& half = report.arm("half_attention");
    const ArmResult& full = report.arm("full_attention");
    const ArmResult& no_cc = report.arm("full_attention_no_cc");
    const ArmResult& residual = report.arm("full_attention_residual");
    report.checks = {
        {"full attention DSC >= half attention DSC - 0.02", full.mean_val_dsc(),
         half.mean_val_dsc() - kAblationDscSlack},
        {"+CC DSC >= -CC DSC - 0.02", full.mean_val_dsc(), no_cc.mean_val_dsc() - kAblationDscSlack},
        {"no-residual median best epoch + 3 >= residual median best epoch",
         full.median_best_epoch() + kAblationEpochSlack, residual.median_best_epoch()},
    };
    return report;
}

namespace {

void table_row(std::ostream& os, const std::string& label, const ArmResult& a) {
    char line[160];
    std::snprintf(line, sizeof line, "%-30s %7s %7s %7s %9s %11.1f\n", label.c_str(),
                  format_percent(a.mean_val.dsc).c_str(), format_percent(a.mean_val.iou).c_str(),
                  format_percent(a.mean_val.recall).c_str(), format_percent(a.mean_val.precision).c_str(),
                  a.median_best_epoch());
    os << line;
}

}  // namespace

void write_ablation_table(std::ostream& os, const AblationReport& report) {
    const std::string rule(77, '-');
    char head[160];
    std::snprintf(head, sizeof head, "%-30s %7s %7s %7s %9s %11s\n", "Method", "DSC", "IoU", "Recall", "Precision",
                  "best epoch");
    os << "Validation scores (%), mean over " << (report.arms.empty() ? 0 : report.arms[0].runs.size())
       << " seeds; best epoch is the median\n"
       << rule << "\n"
       << head << rule << "\n";
    table_row(os, "half attention", report.arm("half_attention"));
    table_row(os, "full attention", report.arm("full_attention"));
    os << rule << "\n";
    table_row(os, "full attention, no CC", report.arm("full_attention_no_cc"));
    table_row(os, "full attention + CC", report.arm("full_attention"));
    table_row(os, "full attention + residual + CC", report.arm("full_attention_residual"));
    os << rule << "\n";
    for (const auto& c : report.checks) {
        char line[200];
        std::snprintf(line, sizeof line, "%s  %s (%.4f vs %.4f)\n", c.pass() ? "ok  " : "MISS", c.name.c_str(), c.lhs,
                      c.rhs);
        os << line;
    }
}

void write_ablation_json(const std::filesystem::path& path, const AblationReport& report) {
    nlohmann::json j;
    j["arms"] = nlohmann::json::array();
    for (const auto& a : report.arms) {
        nlohmann::json arm{{"name", a.arm.name},
                           {"variant", variant_name(a.arm.variant)},
                           {"residual", a.arm.residual},
                           {"color_constancy", a.arm.color_constancy},
                           {"mean_val", {{"dsc", a.mean_val.dsc},
                                         {"iou", a.mean_val.iou},
                                         {"recall", a.mean_val.recall},
                                         {"precision", a.mean_val.precision}}},
                           {"median_best_epoch", a.median_best_epoch()},
                           {"runs", nlohmann::json::array()}};
        for (const auto& r : a.runs) {
            arm["runs"].push_back({{"seed", r.seed},
                                   {"val_dsc", r.val_dsc},
                                   {"best_epoch", r.best_epoch},
                                   {"epochs_run", r.epochs_run}});
        }
        j["arms"].push_back(arm);
    }
    j["checks"] = nlohmann::json::array();
    for (const auto& c : report.checks) j["checks"].push_back({{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"pass", c.pass()}});
    std::ofstream os(path);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    os << j.dump(2) << "\n";
    if (!os) throw Error("failed writing '" + path.string() + "'");
}

ReferenceCost reference_cost(Variant variant) {
    return variant == Variant::FullAttention ? ReferenceCost{36.5, 92.1} : ReferenceCost{35.0, 90.1};
}

CostReport inspect_cost(const ModelConfig& config) {
    config.validate();
    CostReport r;
    r.cost = count_params_flops(config);
    r.params_m = static_cast<double>(r.cost.params) / 1e6;
    r.gflops = static_cast<double>(r.cost.flops) / 1e9;
    r.reference = reference_cost(config.variant);
    r.params_ratio = r.params_m / r.reference.params_m;
    r.gflops_ratio = r.gflops / r.reference.gflops;
    return r;
}

void write_cost_text(std::ostream& os, const ModelConfig& config, const CostReport& r) {
    auto within = [](double ratio) { return std::abs(ratio - 1.0) <= kCostTolerance ? "within" : "outside"; };
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "variant      %s (residual %s)\n"
                  "input        %dx%d\n"
                  "parameters   %llu (%.2f M); reference %.1f M, ratio %.3f, %s +/-%.0f%%\n"
                  "GFLOPs       %.2f per image; reference %.1f G, ratio %.3f, %s +/-%.0f%%\n",
                  variant_name(config.variant), config.residual ? "on" : "off", config.height, config.width,
                  static_cast<unsigned long long>(r.cost.params), r.params_m, r.reference.params_m, r.params_ratio,
                  within(r.params_ratio), kCostTolerance * 100, r.gflops, r.reference.gflops, r.gflops_ratio,
                  within(r.gflops_ratio), kCostTolerance * 100);
    os << buf;
    if (config.width_mult != 1.0 || config.height != 192 || config.width != 256) {
        os << "note         the reference figures apply to full width at 192x256\n";
    }
}

}  // namespace ardu
