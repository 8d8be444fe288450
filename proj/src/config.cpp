// SPDX-License-Identifier: Apache-2.0

#include "ardu/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ardu {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected) {
    throw Error("config: key '" + key + "' expects " + expected + ", got '" + value + "'");
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) bad(key, v, "a number");
        return d;
    } catch (const std::logic_error&) {
        bad(key, v, "a number");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad(key, v, "a boolean");
}

std::vector<int> to_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
    if (out.empty()) bad(key, v, "a comma-separated integer list");
    return out;
}

std::array<int, 4> to_four(const std::string& key, const std::string& v) {
    const auto l = to_list(key, v);
    if (l.size() != 4) bad(key, v, "four comma-separated integers");
    return {l[0], l[1], l[2], l[3]};
}

template <typename Seq>
std::string join(const Seq& s) {
    std::string out;
    for (const auto& x : s) out += (out.empty() ? "" : ",") + std::to_string(x);
    return out;
}

std::string real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

RunConfig RunConfig::toy() {
    RunConfig c;
    c.model = ModelConfig::toy();
    c.train.batch_size = 4;
    return c;
}

RunConfig RunConfig::full() {
    RunConfig c;
    c.model = ModelConfig::full_size();
    c.train.batch_size = 8;
    c.augment.expansion = 6;
    return c;
}

void RunConfig::set(const std::string& key, const std::string& v) {
    auto positive_int = [&](int& dst) {
        const long long x = to_int(key, v);
        if (x < 0 || x > 1'000'000'000) bad(key, v, "a nonnegative integer");
        dst = static_cast<int>(x);
    };
    if (key == "variant") {
        model.variant = parse_variant(v);
    } else if (key == "width_mult") {
        model.width_mult = to_real(key, v);
    } else if (key == "encoder2_widths") {
        model.encoder2_widths = to_four(key, v);
    } else if (key == "decoder_widths") {
        model.decoder_widths = to_four(key, v);
    } else if (key == "aspp_out") {
        positive_int(model.aspp_out);
    } else if (key == "aspp_rates") {
        model.aspp_rates = to_list(key, v);
    } else if (key == "se_ratio") {
        positive_int(model.se_ratio);
    } else if (key == "height") {
        positive_int(model.height);
    } else if (key == "width") {
        positive_int(model.width);
    } else if (key == "residual") {
        model.residual = to_bool(key, v);
    } else if (key == "bn_eps") {
        model.batchnorm.eps = static_cast<float>(to_real(key, v));
    } else if (key == "bn_momentum") {
        model.batchnorm.momentum = static_cast<float>(to_real(key, v));
    } else if (key == "lr") {
        train.lr = to_real(key, v);
    } else if (key == "max_epochs") {
        positive_int(train.max_epochs);
    } else if (key == "batch_size") {
        positive_int(train.batch_size);
    } else if (key == "early_stop_patience") {
        positive_int(train.early_stop_patience);
    } else if (key == "lr_reduce_factor") {
        train.lr_reduce_factor = to_real(key, v);
    } else if (key == "lr_reduce_patience") {
        positive_int(train.lr_reduce_patience);
    } else if (key == "beta1") {
        train.beta1 = to_real(key, v);
    } else if (key == "beta2") {
        train.beta2 = to_real(key, v);
    } else if (key == "adam_eps") {
        train.eps = to_real(key, v);
    } else if (key == "dice_lambda") {
        train.dice_lambda = to_real(key, v);
    } else if (key == "aux_loss_weight") {
        train.aux_loss_weight = to_real(key, v);
    } else if (key == "min_delta") {
        train.min_delta = to_real(key, v);
    } else if (key == "threshold") {
        train.threshold = to_real(key, v);
    } else if (key == "color_constancy") {
        color_constancy = to_bool(key, v);
    } else if (key == "cc_p") {
        cc.p = to_real(key, v);
    } else if (key == "cc_target") {
        if (v == "mean") {
            cc.target = ColorConstancyConfig::Target::ChannelMean;
        } else if (v == "fixed") {
            cc.target = ColorConstancyConfig::Target::Fixed;
        } else {
            bad(key, v, "mean or fixed");
        }
    } else if (key == "cc_level") {
        cc.level = to_real(key, v);
    } else if (key == "augment_rot90") {
        augment.rot90 = to_bool(key, v);
    } else if (key == "augment_hflip") {
        augment.hflip = to_bool(key, v);
    } else if (key == "augment_vflip") {
        augment.vflip = to_bool(key, v);
    } else if (key == "augment_brightness_contrast") {
        augment.brightness_contrast = to_bool(key, v);
    } else if (key == "augment_brightness") {
        augment.brightness = to_real(key, v);
    } else if (key == "augment_contrast") {
        augment.contrast = to_real(key, v);
    } else if (key == "augment_expansion") {
        positive_int(augment.expansion);
    } else if (key == "augment_hsv") {
        augment.hsv = to_bool(key, v);
    } else if (key == "augment_histogram_equalization") {
        augment.histogram_equalization = to_bool(key, v);
    } else if (key == "split_train") {
        split.train = to_real(key, v);
    } else if (key == "split_val") {
        split.val = to_real(key, v);
    } else if (key == "split_test") {
        split.test = to_real(key, v);
    } else if (key == "samples") {
        const long long x = to_int(key, v);
        if (x < 0) bad(key, v, "a nonnegative integer");
        samples = static_cast<std::size_t>(x);
    } else if (key == "seed") {
        const long long x = to_int(key, v);
        if (x < 0) bad(key, v, "a nonnegative integer");
        seed = static_cast<std::uint64_t>(x);
    } else if (key == "data_dir") {
        data_dir = v;
    } else if (key == "out_dir") {
        out_dir = v;
    } else {
        throw Error("config: unknown key '" + key + "'");
    }
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    augment.validate();
    cc.validate();
    split.validate();
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "# resolved configuration, version " << kVersion << "\n";
    os << "variant = " << variant_name(model.variant) << "\n";
    os << "width_mult = " << real(model.width_mult) << "\n";
    os << "encoder2_widths = " << join(model.encoder2_widths) << "\n";
    os << "decoder_widths = " << join(model.decoder_widths) << "\n";
    os << "aspp_out = " << model.aspp_out << "\n";
    os << "aspp_rates = " << join(model.aspp_rates) << "\n";
    os << "se_ratio = " << model.se_ratio << "\n";
    os << "height = " << model.height << "\n";
    os << "width = " << model.width << "\n";
    os << "residual = " << (model.residual ? "true" : "false") << "\n";
    os << "bn_eps = " << real(model.batchnorm.eps) << "\n";
    os << "bn_momentum = " << real(model.batchnorm.momentum) << "\n";
    os << "lr = " << real(train.lr) << "\n";
    os << "max_epochs = " << train.max_epochs << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "early_stop_patience = " << train.early_stop_patience << "\n";
    os << "lr_reduce_factor = " << real(train.lr_reduce_factor) << "\n";
    os << "lr_reduce_patience = " << train.lr_reduce_patience << "\n";
    os << "beta1 = " << real(train.beta1) << "\n";
    os << "beta2 = " << real(train.beta2) << "\n";
    os << "adam_eps = " << real(train.eps) << "\n";
    os << "dice_lambda = " << real(train.dice_lambda) << "\n";
    os << "aux_loss_weight = " << real(train.aux_loss_weight) << "\n";
    os << "min_delta = " << real(train.min_delta) << "\n";
    os << "threshold = " << real(train.threshold) << "\n";
    os << "color_constancy = " << (color_constancy ? "true" : "false") << "\n";
    os << "cc_p = " << real(cc.p) << "\n";
    os << "cc_target = " << (cc.target == ColorConstancyConfig::Target::Fixed ? "fixed" : "mean") << "\n";
    os << "cc_level = " << real(cc.level) << "\n";
    os << "augment_rot90 = " << (augment.rot90 ? "true" : "false") << "\n";
    os << "augment_hflip = " << (augment.hflip ? "true" : "false") << "\n";
    os << "augment_vflip = " << (augment.vflip ? "true" : "false") << "\n";
    os << "augment_brightness_contrast = " << (augment.brightness_contrast ? "true" : "false") << "\n";
    os << "augment_brightness = " << real(augment.brightness) << "\n";
    os << "augment_contrast = " << real(augment.contrast) << "\n";
    os << "augment_expansion = " << augment.expansion << "\n";
    os << "augment_hsv = " << (augment.hsv ? "true" : "false") << "\n";
    os << "augment_histogram_equalization = " << (augment.histogram_equalization ? "true" : "false") << "\n";
    os << "split_train = " << real(split.train) << "\n";
    os << "split_val = " << real(split.val) << "\n";
    os << "split_test = " << real(split.test) << "\n";
    os << "samples = " << samples << "\n";
    os << "seed = " << seed << "\n";
    if (!data_dir.empty()) os << "data_dir = " << data_dir.string() << "\n";
    if (!out_dir.empty()) os << "out_dir = " << out_dir.string() << "\n";
    return os.str();
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::string preset = "toy";
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error("config " + origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw Error("config " + origin + ":" + std::to_string(lineno) + ": empty key");
        if (key == "preset") {
            preset = value;
        } else {
            entries.emplace_back(std::move(key), std::move(value));
        }
    }
    RunConfig c;
    if (preset == "toy") {
        c = RunConfig::toy();
    } else if (preset == "full") {
        c = RunConfig::full();
    } else {
        throw Error("config " + origin + ": unknown preset '" + preset + "' (expected toy or full)");
    }
    for (const auto& [k, v] : entries) c.set(k, v);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.string());
}

}  // namespace ardu
