// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ardu/experiment.hpp"

namespace ardu::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string data_dir;
    std::string out_dir;
    std::string variant;
    bool no_cc = false;
    bool no_residual = false;
    std::optional<double> threshold;
    std::vector<std::string> overrides;  // key=value
    std::string checkpoint;
    std::string split = "test";
    std::string pred_dir;
    int seeds = 3;
};

RunConfig resolve(const Options& o) {
    RunConfig c = o.config_path.empty() ? RunConfig::toy() : load_config(o.config_path);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) c.seed = *o.seed;
    if (!o.data_dir.empty()) c.data_dir = o.data_dir;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    if (!o.variant.empty()) c.model.variant = parse_variant(o.variant);
    if (o.no_cc) c.color_constancy = false;
    if (o.no_residual) c.model.residual = false;
    if (o.threshold) c.train.threshold = *o.threshold;
    c.validate();
    return c;
}

fs::path require_out_dir(const RunConfig& c) {
    if (c.out_dir.empty()) throw Error("--out-dir is required for this command");
    fs::create_directories(c.out_dir);
    return c.out_dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw Error("failed writing '" + path.string() + "'");
}

// Resolved config plus a provenance record, written before any work starts.
void write_provenance(const fs::path& dir, const RunConfig& c, const std::string& command, int argc,
                      const char* const* argv) {
    write_text(dir / "config.cfg", c.to_text());
    nlohmann::json j{{"tool", "ardu"}, {"version", kVersion}, {"command", command}, {"seed", c.seed}};
    j["argv"] = nlohmann::json::array();
    for (int i = 0; i < argc; ++i) j["argv"].push_back(argv[i]);
    write_text(dir / "provenance.json", j.dump(2) + "\n");
}

Model load_model(const Options& o, const RunConfig& c) {
    if (o.checkpoint.empty()) throw Error("--checkpoint is required for this command");
    return load_checkpoint(o.checkpoint, c.model);
}

// Model input for one split: colour constancy as configured, then centering.
Dataset model_input(const Dataset& raw, const RunConfig& c) {
    return prepare_for_model(raw, c.color_constancy, c.cc);
}

Dataset load_split(const RunConfig& c, const std::string& name) {
    if (c.data_dir.empty()) throw Error("--data-dir is required for this command");
    Splits s = read_dataset(c.data_dir);
    return split_by_name(s, name);
}

int cmd_gen_data(const RunConfig& c, std::ostream& out) {
    const fs::path dir = c.out_dir;
    const Splits s = generate_splits(c);
    write_dataset(dir, s);
    out << "wrote " << s.train.size() << "/" << s.val.size() << "/" << s.test.size()
        << " train/val/test samples to " << dir.string() << "\n";
    return 0;
}

int cmd_preprocess(const RunConfig& c, std::ostream& out) {
    if (c.data_dir.empty()) throw Error("--data-dir is required for this command");
    Splits s = read_dataset(c.data_dir);
    if (c.color_constancy) {
        for (Dataset* d : {&s.train, &s.val, &s.test}) {
            for (auto& x : *d) x.image = shades_of_gray(x.image, c.cc);
        }
    }
    write_dataset(c.out_dir, s);
    out << "preprocessed " << s.train.size() + s.val.size() + s.test.size() << " images ("
        << (c.color_constancy ? "colour constancy applied" : "colour constancy off") << ") into "
        << c.out_dir.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
    const fs::path dir = c.out_dir;
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult r = run_training(prepare_splits(load_or_generate(c), c), c, [&](const EpochRecord& e) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[200];
        std::snprintf(line, sizeof line, "epoch %3d  train %.4f  val %.4f  val DSC %.4f  lr %.2g%s  (%.0fs)\n",
                      e.epoch, e.train_loss, e.val_loss, e.val_dsc, e.lr, e.improved ? "  *" : "", s);
        err << line << std::flush;
    });
    write_history(dir / "history.jsonl", r.history);
    if (r.history.diverged) throw Error("training diverged: " + r.history.stop_reason);
    save_checkpoint(r.model, dir / "model.ardu");
    write_report_json(dir / "val_report.json", r.val);
    if (!r.test.images.empty()) write_report_json(dir / "test_report.json", r.test);
    out << history_summary(r.history) << "\n"
        << "val DSC " << format_percent(r.val.mean.dsc);
    if (!r.test.images.empty()) out << ", test DSC " << format_percent(r.test.mean.dsc);
    out << "\ncheckpoint " << (dir / "model.ardu").string() << "\n";
    return 0;
}

int cmd_eval(const Options& o, const RunConfig& c, std::ostream& out) {
    const Dataset raw = load_split(c, o.split);
    if (raw.empty()) throw Error("split '" + o.split + "' is empty");
    MetricReport report;
    if (!o.pred_dir.empty()) {
        // Score stored masks directly instead of running a model.
        for (const auto& s : raw) {
            const Tensor pred = read_mask_png(fs::path(o.pred_dir) / (s.id + ".png"));
            report.add(s.id, confusion_counts(pred, s.mask));
        }
        report.finalize();
    } else {
        report = evaluate(load_model(o, c), model_input(raw, c), c.train.threshold);
    }
    const fs::path dir = c.out_dir;
    std::ostringstream text;
    write_report_text(text, report, "split " + o.split);
    write_text(dir / ("report_" + o.split + ".txt"), text.str());
    write_report_json(dir / ("report_" + o.split + ".json"), report);
    out << text.str();
    return 0;
}

int cmd_predict(const Options& o, const RunConfig& c, std::ostream& out) {
    const Dataset raw = load_split(c, o.split);
    const Model model = load_model(o, c);
    const std::vector<Tensor> probs = predict(model, model_input(raw, c));
    const fs::path dir = fs::path(c.out_dir) / "pred";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < raw.size(); ++i) write_mask_png(dir / (raw[i].id + ".png"), probs[i], c.train.threshold);
    out << "wrote " << raw.size() << " masks to " << dir.string() << "\n";
    return 0;
}

int cmd_ablate(const Options& o, const RunConfig& c, std::ostream& out, std::ostream& err) {
    if (o.seeds < 1) throw Error("--seeds must be >= 1");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < o.seeds; ++i) seeds.push_back(c.seed + static_cast<std::uint64_t>(i));
    const AblationReport report = run_ablation(load_or_generate(c), c, seeds, [&](const AblationArm& a, const ArmRun& r) {
        err << a.name << " seed " << r.seed << ": val DSC " << format_percent(r.val_dsc) << ", best epoch "
            << r.best_epoch << " of " << r.epochs_run << "\n"
            << std::flush;
    });
    std::ostringstream table;
    write_ablation_table(table, report);
    write_text(fs::path(c.out_dir) / "ablation.txt", table.str());
    write_ablation_json(fs::path(c.out_dir) / "ablation.json", report);
    out << table.str();
    return 0;
}

int cmd_inspect(const RunConfig& c, std::ostream& out) {
    const CostReport r = inspect_cost(c.model);
    std::ostringstream text;
    write_cost_text(text, c.model, r);
    if (!c.out_dir.empty()) {
        write_text(fs::path(c.out_dir) / "inspect.txt", text.str());
        const nlohmann::json j{{"variant", variant_name(c.model.variant)},
                               {"params", r.cost.params},
                               {"flops", r.cost.flops},
                               {"params_m", r.params_m},
                               {"gflops", r.gflops},
                               {"reference_params_m", r.reference.params_m},
                               {"reference_gflops", r.reference.gflops},
                               {"params_ratio", r.params_ratio},
                               {"gflops_ratio", r.gflops_ratio}};
        write_text(fs::path(c.out_dir) / "inspect.json", j.dump(2) + "\n");
    }
    out << text.str();
    return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Double U-Net segmentation with attention gates and residual blocks"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "key = value config file (default: toy preset)")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--data-dir", o.data_dir, "dataset directory (images/, masks/, manifest.tsv)");
        sub->add_option("--out-dir", o.out_dir, "output directory");
        sub->add_option("--variant", o.variant, "half or full attention")->check(CLI::IsMember({"half", "full"}));
        sub->add_flag("--no-cc", o.no_cc, "disable colour constancy");
        sub->add_flag("--no-residual", o.no_residual, "plain convolution blocks");
        sub->add_option("--threshold", o.threshold, "binarisation threshold in (0,1)");
        sub->add_option("--set", o.overrides, "config override key=value (repeatable)");
    };
    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    CLI::App* pre = app.add_subcommand("preprocess", "apply colour constancy to a dataset directory");
    CLI::App* trn = app.add_subcommand("train", "train a model; writes checkpoint and history");
    CLI::App* evl = app.add_subcommand("eval", "score a split and write a metric report");
    CLI::App* prd = app.add_subcommand("predict", "write binary mask PNGs for a split");
    CLI::App* abl = app.add_subcommand("ablate", "four-arm ablation over several seeds");
    CLI::App* ins = app.add_subcommand("inspect", "parameter and FLOP counts for a config");
    for (CLI::App* s : {gen, pre, trn, evl, prd, abl, ins}) common(s);
    for (CLI::App* s : {evl, prd}) {
        s->add_option("--checkpoint", o.checkpoint, "model checkpoint")->check(CLI::ExistingFile);
        s->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    }
    evl->add_option("--pred-dir", o.pred_dir, "score stored masks <id>.png instead of a model")
        ->check(CLI::ExistingDirectory);
    abl->add_option("--seeds", o.seeds, "number of consecutive training seeds")->check(CLI::PositiveNumber);

    if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
        err << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        const RunConfig c = resolve(o);
        if (sub != ins) require_out_dir(c);
        if (!c.out_dir.empty()) {
            fs::create_directories(c.out_dir);
            write_provenance(c.out_dir, c, sub->get_name(), argc, argv);
        }
        if (sub == gen) return cmd_gen_data(c, out);
        if (sub == pre) return cmd_preprocess(c, out);
        if (sub == trn) return cmd_train(c, out, err);
        if (sub == evl) return cmd_eval(o, c, out);
        if (sub == prd) return cmd_predict(o, c, out);
        if (sub == abl) return cmd_ablate(o, c, out, err);
        return cmd_inspect(c, out);
    } catch (const std::exception& e) {
        err << "error: " << sub->get_name() << ": " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ardu::cli
