// SPDX-License-Identifier: Apache-2.0

#include "ardu/model.hpp"

#include <algorithm>
#include <sstream>

namespace ardu {

namespace {
constexpr float kFusionGain = 4.0f;
}  // namespace

const char* variant_name(Variant v) { return v == Variant::HalfAttention ? "half" : "full"; }

Variant parse_variant(const std::string& s) {
    if (s == "half" || s == "half_attention") return Variant::HalfAttention;
    if (s == "full" || s == "full_attention") return Variant::FullAttention;
    throw Error("unknown variant '" + s + "' (expected half or full)");
}

ModelConfig ModelConfig::full_size() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.width_mult = 0.125;
    c.encoder2_widths = {8, 16, 32, 64};
    c.decoder_widths = {32, 16, 8, 8};
    c.aspp_out = 8;
    c.aspp_rates = {1, 2, 3};
    c.se_ratio = 4;
    c.height = 64;
    c.width = 64;
    return c;
}

void ModelConfig::validate() const {
    std::vector<std::string> problems;
    if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
        problems.push_back("input extent " + std::to_string(height) + "x" + std::to_string(width) +
                           " must be positive and divisible by 16");
    }
    if (!(width_mult > 0.0)) problems.push_back("width_mult must be positive");
    if (se_ratio < 1) problems.push_back("se_ratio must be >= 1");
    auto check_widths = [&](const char* what, const std::array<int, 4>& ws) {
        for (int w : ws) {
            if (se_ratio >= 1 && (w < se_ratio || w % se_ratio != 0)) {
                problems.push_back(std::string(what) + " width " + std::to_string(w) +
                                   " must be a positive multiple of se_ratio " + std::to_string(se_ratio));
            }
        }
    };
    check_widths("encoder2", encoder2_widths);
    check_widths("decoder", decoder_widths);
    if (aspp_out < 1) problems.push_back("aspp_out must be >= 1");
    if (aspp_rates.empty() || aspp_rates.front() != 1) problems.push_back("aspp_rates must start at 1");
    for (std::size_t i = 1; i < aspp_rates.size(); ++i) {
        if (aspp_rates[i] <= aspp_rates[i - 1]) {
            problems.push_back("aspp_rates must be strictly increasing");
            break;
        }
    }
    if (batchnorm.eps <= 0.0f) problems.push_back("batch-norm eps must be positive");
    if (batchnorm.momentum < 0.0f || batchnorm.momentum >= 1.0f) problems.push_back("batch-norm momentum must lie in [0,1)");
    if (problems.empty()) return;
    std::ostringstream os;
    os << "invalid model config:";
    for (const auto& p : problems) os << "\n  - " << p;
    throw Error(os.str());
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m(config, seed);
    ParameterStore& store = m.store_;
    const auto bn = config.batchnorm;
    const int se = config.se_ratio;
    const auto& dw = config.decoder_widths;
    const auto& e2 = config.encoder2_widths;

    m.encoder1 = VggEncoder::create(store, "enc1", 3, config.width_mult);
    const auto& e1 = m.encoder1.widths;
    m.aspp1 = Aspp::create(store, "aspp1", {e1[4], config.aspp_out, config.aspp_rates}, bn);

    int prev = config.aspp_out;
    for (int i = 0; i < 4; ++i) {
        const int skip = e1[3 - i];
        const std::string name = "dec1.block" + std::to_string(i);
        m.gates1.push_back(AttentionGate::create(store, name + ".gate", {prev, skip, 0}));
        m.decoder1.push_back(DecoderBlock::create(store, name, {prev + skip, dw[i], se}, config.residual, bn));
        prev = dw[i];
    }
    m.head1 = Conv2d::create(store, "head1", dw[3], 1, 1);

    int in = 3;
    for (int i = 0; i < 4; ++i) {
        m.encoder2.push_back(
            ConvBlock::create(store, "enc2.block" + std::to_string(i), {in, e2[i], se}, config.residual, bn));
        in = e2[i];
    }
    m.aspp2 = Aspp::create(store, "aspp2", {e2[3], config.aspp_out, config.aspp_rates}, bn);

    prev = config.aspp_out;
    for (int i = 0; i < 4; ++i) {
        const int skip1 = e1[3 - i];
        const int skip2 = e2[3 - i];
        const std::string name = "dec2.block" + std::to_string(i);
        if (config.variant == Variant::FullAttention) {
            m.gates2.push_back(AttentionGate::create(store, name + ".gate", {prev, skip2, 0}));
        }
        m.decoder2.push_back(
            DecoderBlock::create(store, name, {prev + skip1 + skip2, dw[i], se}, config.residual, bn));
        prev = dw[i];
    }
    m.head2 = Conv2d::create(store, "head2", dw[3], 1, 1);
    m.final_head = Conv2d::create(store, "final", 2, 1, 1);
    // Start the fusion as a monotone blend: 0.5 when both heads output 0.5.
    std::fill(m.final_head.weight.data().begin(), m.final_head.weight.data().end(), kFusionGain);
    m.final_head.bias.data()[0] = -kFusionGain;
    return m;
}

Model::FirstPass Model::first_pass(const Tensor& image, Mode mode, std::vector<Tensor>* attention) const {
    const Shape& s = image.shape();
    if (s.c != 3) throw Error("model: input channel axis must be 3, got " + std::to_string(s.c));
    if (s.h != config_.height || s.w != config_.width) {
        throw Error("model: input extent " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                    " does not match configured " + std::to_string(config_.height) + "x" +
                    std::to_string(config_.width));
    }
    FirstPass p;
    p.enc = encoder1.forward(image);
    Tensor x = aspp1.forward(p.enc.bottleneck, mode);
    for (std::size_t i = 0; i < decoder1.size(); ++i) {
        AttentionOutput gated = gates1[i].forward(p.enc.skips[3 - i], x);
        if (attention) attention->push_back(gated.alpha);
        x = decoder1[i].forward(x, {gated.gated}, mode);
    }
    p.out1 = ops::sigmoid(head1(x));
    return p;
}

Tensor Model::forward_first(const Tensor& image, Mode mode) const { return first_pass(image, mode, nullptr).out1; }

ForwardOutput Model::forward(const Tensor& image, Mode mode) const {
    ForwardOutput out;
    FirstPass first = first_pass(image, mode, &out.attention);
    out.out1 = first.out1;

    Tensor x = ops::mul(image, out.out1);
    std::array<Tensor, 4> skips2;
    for (std::size_t i = 0; i < encoder2.size(); ++i) {
        x = encoder2[i].forward(x, mode);
        skips2[i] = x;
        x = ops::maxpool2d(x);
    }
    x = aspp2.forward(x, mode);
    for (std::size_t i = 0; i < decoder2.size(); ++i) {
        Tensor skip2 = skips2[3 - i];
        if (!gates2.empty()) {
            AttentionOutput gated = gates2[i].forward(skip2, x);
            out.attention.push_back(gated.alpha);
            skip2 = gated.gated;
        }
        x = decoder2[i].forward(x, {first.enc.skips[3 - i], skip2}, mode);
    }
    out.out2 = ops::sigmoid(head2(x));
    out.final = ops::sigmoid(final_head(ops::concat_channels(out.out1, out.out2)));
    return out;
}

Model Model::clone() const {
    Model copy = build(config_, seed_);
    copy.assign_from(*this);
    return copy;
}

void Model::assign_from(const Model& other) {
    const auto& src = other.store_.parameters();
    const auto& dst = store_.parameters();
    if (src.size() != dst.size()) throw Error("model: cannot assign from a model with a different layout");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (src[i].name != dst[i].name || !(src[i].value.shape() == dst[i].value.shape())) {
            throw Error("model: parameter mismatch at '" + dst[i].name + "'");
        }
        Tensor target = dst[i].value;
        std::copy(src[i].value.data().begin(), src[i].value.data().end(), target.data().begin());
    }
    const auto& ss = other.store_.stats();
    const auto& ds = store_.stats();
    if (ss.size() != ds.size()) throw Error("model: cannot assign statistics from a different layout");
    for (std::size_t i = 0; i < ds.size(); ++i) *ds[i].stats = *ss[i].stats;
}

namespace {

// Layer-by-layer accounting mirroring Model::build / Model::forward.
struct Tally {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;

    static std::uint64_t u(long long v) { return static_cast<std::uint64_t>(v); }

    void conv(int in, int out, int k, long long pixels, bool bias = true) {
        params += u(out) * u(in) * u(k) * u(k) + (bias ? u(out) : 0);
        flops += 2 * u(out) * u(in) * u(k) * u(k) * u(pixels) + (bias ? u(out) * u(pixels) : 0);
    }
    void bn(int c, long long pixels) {
        params += 2 * u(c);
        flops += 2 * u(c) * u(pixels);
    }
    void pointwise(int c, long long pixels) { flops += u(c) * u(pixels); }
    void maxpool(int c, long long out_pixels) { flops += 3 * u(c) * u(out_pixels); }
    void upsample(int c, long long out_pixels) { flops += 7 * u(c) * u(out_pixels); }

    void se(int c, int ratio, long long pixels) {
        const int hidden = std::max(1, c / ratio);
        pointwise(c, pixels);  // global pooling
        conv(c, hidden, 1, 1);
        pointwise(hidden, 1);
        conv(hidden, c, 1, 1);
        pointwise(c, 1);
        pointwise(c, pixels);  // channel scaling
    }
    void conv_block(int in, int out, int ratio, bool residual, long long pixels) {
        conv(in, out, 3, pixels);
        bn(out, pixels);
        pointwise(out, pixels);
        conv(out, out, 3, pixels);
        bn(out, pixels);
        if (residual) {
            conv(in, out, 1, pixels);
            bn(out, pixels);
            pointwise(out, pixels);  // add
        }
        pointwise(out, pixels);  // relu
        se(out, ratio, pixels);
    }
    void gate(int gate_c, int skip_c, long long skip_pixels) {
        const int inter = std::max(1, skip_c / 2);
        const long long small = skip_pixels / 4;
        conv(skip_c, inter, 1, small, false);
        conv(gate_c, inter, 1, small);
        pointwise(inter, small);  // add
        pointwise(inter, small);  // relu
        conv(inter, 1, 1, small);
        pointwise(1, small);  // sigmoid
        upsample(1, skip_pixels);
        pointwise(skip_c, skip_pixels);  // gating multiply
    }
    void aspp(int in, int out, const std::vector<int>& rates, long long pixels) {
        for (int r : rates) {
            conv(in, out, r == 1 ? 1 : 3, pixels);
            bn(out, pixels);
            pointwise(out, pixels);
        }
        pointwise(in, pixels);  // global pooling
        conv(in, out, 1, 1);
        bn(out, 1);
        pointwise(out, 1);
        const int fused_in = static_cast<int>(rates.size() + 1) * out;
        conv(fused_in, out, 1, pixels);
        bn(out, pixels);
        pointwise(out, pixels);
    }
};

}  // namespace

ModelCost count_params_flops(const ModelConfig& config) {
    config.validate();
    Tally t;
    const long long full = static_cast<long long>(config.height) * config.width;
    auto level = [&](int i) { return full >> (2 * i); };  // pixels at 1/2^i scale
    const auto e1 = VggEncoder::scaled_widths(config.width_mult);
    const auto& e2 = config.encoder2_widths;
    const auto& dw = config.decoder_widths;
    const int se = config.se_ratio;

    int in = 3;
    for (int stage = 0; stage < 5; ++stage) {
        if (stage > 0) t.maxpool(in, level(stage));
        for (int i = 0; i < VggEncoder::kStageDepth[stage]; ++i) {
            t.conv(in, e1[stage], 3, level(stage));
            t.pointwise(e1[stage], level(stage));
            in = e1[stage];
        }
    }
    t.aspp(e1[4], config.aspp_out, config.aspp_rates, level(4));
    int prev = config.aspp_out;
    for (int i = 0; i < 4; ++i) {
        const int skip = e1[3 - i];
        const long long px = level(3 - i);
        t.gate(prev, skip, px);
        t.upsample(prev, px);
        t.conv_block(prev + skip, dw[i], se, config.residual, px);
        prev = dw[i];
    }
    t.conv(dw[3], 1, 1, full);
    t.pointwise(1, full);

    t.pointwise(3, full);  // image * out1
    in = 3;
    for (int i = 0; i < 4; ++i) {
        t.conv_block(in, e2[i], se, config.residual, level(i));
        t.maxpool(e2[i], level(i + 1));
        in = e2[i];
    }
    t.aspp(e2[3], config.aspp_out, config.aspp_rates, level(4));
    prev = config.aspp_out;
    for (int i = 0; i < 4; ++i) {
        const long long px = level(3 - i);
        if (config.variant == Variant::FullAttention) t.gate(prev, e2[3 - i], px);
        t.upsample(prev, px);
        t.conv_block(prev + e1[3 - i] + e2[3 - i], dw[i], se, config.residual, px);
        prev = dw[i];
    }
    t.conv(dw[3], 1, 1, full);
    t.pointwise(1, full);
    t.conv(2, 1, 1, full);
    t.pointwise(1, full);
    return {t.params, t.flops};
}

}  // namespace ardu
