// SPDX-License-Identifier: Apache-2.0

#include "ardu/blocks.hpp"

#include <cmath>
#include <random>

#include "ardu/random.hpp"

namespace ardu {

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init, int fan_in) {
    if (index_.contains(name)) throw Error("parameter store: duplicate parameter name '" + name + "'");
    std::vector<float> data(shape.numel(), 0.0f);
    switch (init) {
        case Init::Zeros: break;
        case Init::Ones: std::fill(data.begin(), data.end(), 1.0f); break;
        case Init::HeUniform: {
            if (fan_in <= 0) throw Error("parameter store: He init of '" + name + "' needs a positive fan-in");
            const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
            std::mt19937_64 rng(derive_seed(seed_, fnv1a(name)));
            std::uniform_real_distribution<float> dist(-limit, limit);
            for (float& v : data) v = dist(rng);
            break;
        }
    }
    Tensor t = Tensor::from_data(shape, std::move(data), true);
    index_.emplace(name, params_.size());
    params_.push_back({name, t});
    return t;
}

std::shared_ptr<ops::BatchNormStats> ParameterStore::create_stats(const std::string& name, int channels) {
    if (stats_index_.contains(name)) throw Error("parameter store: duplicate statistics name '" + name + "'");
    auto stats = std::make_shared<ops::BatchNormStats>();
    stats->reset(channels);
    stats_index_.emplace(name, stats_.size());
    stats_.push_back({name, stats});
    return stats;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.numel();
    return total;
}

Tensor ParameterStore::find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error("parameter store: no parameter named '" + name + "'");
    return params_[it->second].value;
}

std::shared_ptr<ops::BatchNormStats> ParameterStore::find_stats(const std::string& name) const {
    const auto it = stats_index_.find(name);
    if (it == stats_index_.end()) throw Error("parameter store: no statistics named '" + name + "'");
    return stats_[it->second].stats;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, int in, int out, int kernel,
                      ops::Conv2dOptions options) {
    Conv2d conv;
    conv.weight = store.create(name + ".weight", {out, in, kernel, kernel}, Init::HeUniform, in * kernel * kernel);
    conv.bias = store.create(name + ".bias", {1, out, 1, 1}, Init::Zeros);
    conv.options = options;
    return conv;
}

BatchNorm2d BatchNorm2d::create(ParameterStore& store, const std::string& name, int channels,
                                ops::BatchNormOptions options) {
    BatchNorm2d bn;
    bn.gamma = store.create(name + ".gamma", {1, channels, 1, 1}, Init::Ones);
    bn.beta = store.create(name + ".beta", {1, channels, 1, 1}, Init::Zeros);
    bn.stats = store.create_stats(name, channels);
    bn.options = options;
    return bn;
}

void ConvBlockSpec::validate() const {
    if (in_channels < 1 || out_channels < 1) throw Error("conv block: channel counts must be >= 1");
    if (se_ratio < 1) throw Error("conv block: se_ratio must be >= 1");
    if (out_channels % se_ratio != 0) {
        throw Error("conv block: out_channels " + std::to_string(out_channels) + " not divisible by se_ratio " +
                    std::to_string(se_ratio));
    }
}

void AttentionGateSpec::validate() const {
    if (gate_channels < 1 || skip_channels < 1) throw Error("attention gate: channel counts must be >= 1");
    if (inter_channels < 0) throw Error("attention gate: inter_channels must be >= 1");
}

void AsppSpec::validate() const {
    if (in_channels < 1 || out_channels < 1) throw Error("aspp: channel counts must be >= 1");
    if (rates.empty() || rates.front() != 1) throw Error("aspp: dilation rates must start at 1");
    for (std::size_t i = 1; i < rates.size(); ++i) {
        if (rates[i] <= rates[i - 1]) throw Error("aspp: dilation rates must be strictly increasing");
    }
}

SqueezeExcite SqueezeExcite::create(ParameterStore& store, const std::string& name, int channels, int ratio) {
    SqueezeExcite se;
    const int hidden = std::max(1, channels / ratio);
    se.reduce = Conv2d::create(store, name + ".reduce", channels, hidden, 1);
    se.expand = Conv2d::create(store, name + ".expand", hidden, channels, 1);
    return se;
}

Tensor SqueezeExcite::operator()(const Tensor& x) const {
    if (x.shape().c != reduce.in_channels()) {
        throw Error("squeeze-excite: channel axis mismatch (got " + std::to_string(x.shape().c) + ", expected " +
                    std::to_string(reduce.in_channels()) + ")");
    }
    const Tensor s = ops::sigmoid(expand(ops::relu(reduce(ops::global_avg_pool(x)))));
    return ops::mul(x, s);
}

ConvBlock ConvBlock::create(ParameterStore& store, const std::string& name, const ConvBlockSpec& spec,
                            bool residual, ops::BatchNormOptions bn) {
    spec.validate();
    ConvBlock b;
    b.spec = spec;
    b.residual = residual;
    b.conv1 = Conv2d::create(store, name + ".conv1", spec.in_channels, spec.out_channels, 3, {1, 1, 1});
    b.bn1 = BatchNorm2d::create(store, name + ".bn1", spec.out_channels, bn);
    b.conv2 = Conv2d::create(store, name + ".conv2", spec.out_channels, spec.out_channels, 3, {1, 1, 1});
    b.bn2 = BatchNorm2d::create(store, name + ".bn2", spec.out_channels, bn);
    if (residual) {
        b.shortcut = Conv2d::create(store, name + ".shortcut", spec.in_channels, spec.out_channels, 1);
        b.shortcut_bn = BatchNorm2d::create(store, name + ".shortcut_bn", spec.out_channels, bn);
    }
    b.se = SqueezeExcite::create(store, name + ".se", spec.out_channels, spec.se_ratio);
    return b;
}

Tensor ConvBlock::forward_merged(const Tensor& x, Mode mode) const {
    if (x.shape().c != spec.in_channels) {
        throw Error("conv block: channel axis mismatch (got " + std::to_string(x.shape().c) + ", expected " +
                    std::to_string(spec.in_channels) + ")");
    }
    const Tensor main = bn2(conv2(ops::relu(bn1(conv1(x), mode))), mode);
    if (!residual) return ops::relu(main);
    return ops::relu(ops::add(main, shortcut_bn(shortcut(x), mode)));
}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) const { return se(forward_merged(x, mode)); }

AttentionGate AttentionGate::create(ParameterStore& store, const std::string& name, const AttentionGateSpec& spec) {
    spec.validate();
    AttentionGate g;
    g.spec = spec;
    const int inter = spec.resolved_inter();
    g.theta_x.weight = store.create(name + ".theta_x.weight", {inter, spec.skip_channels, 1, 1}, Init::HeUniform,
                                    spec.skip_channels);
    g.phi_g = Conv2d::create(store, name + ".phi_g", spec.gate_channels, inter, 1);
    g.psi = Conv2d::create(store, name + ".psi", inter, 1, 1);
    return g;
}

AttentionOutput AttentionGate::forward(const Tensor& skip, const Tensor& gate) const {
    const Shape& xs = skip.shape();
    const Shape& gs = gate.shape();
    if (xs.c != spec.skip_channels) {
        throw Error("attention gate: skip channel axis mismatch (got " + std::to_string(xs.c) + ", expected " +
                    std::to_string(spec.skip_channels) + ")");
    }
    if (gs.c != spec.gate_channels) {
        throw Error("attention gate: gate channel axis mismatch (got " + std::to_string(gs.c) + ", expected " +
                    std::to_string(spec.gate_channels) + ")");
    }
    if (gs.n != xs.n) throw Error("attention gate: batch axis mismatch between " + xs.str() + " and " + gs.str());
    int stride = 0;
    if (gs.h * 2 == xs.h && gs.w * 2 == xs.w) {
        stride = 2;
    } else if (gs.h == xs.h && gs.w == xs.w) {
        stride = 1;
    } else {
        throw Error("attention gate: gate extent " + gs.str() + " is neither half nor equal to skip extent " +
                    xs.str());
    }
    const Tensor theta = ops::conv2d(skip, theta_x.weight, Tensor(), {.stride = stride});
    const Tensor phi = phi_g(gate);
    Tensor alpha = ops::sigmoid(psi(ops::relu(ops::add(theta, phi))));
    if (stride == 2) alpha = ops::upsample_bilinear2x(alpha);
    return {ops::mul(skip, alpha), alpha};
}

Aspp Aspp::create(ParameterStore& store, const std::string& name, const AsppSpec& spec, ops::BatchNormOptions bn) {
    spec.validate();
    Aspp a;
    a.spec = spec;
    for (int rate : spec.rates) {
        const std::string branch = name + ".rate" + std::to_string(rate);
        if (rate == 1) {
            a.branches.push_back(Conv2d::create(store, branch, spec.in_channels, spec.out_channels, 1));
        } else {
            a.branches.push_back(Conv2d::create(store, branch, spec.in_channels, spec.out_channels, 3,
                                                {.stride = 1, .padding = rate, .dilation = rate}));
        }
        a.branch_bn.push_back(BatchNorm2d::create(store, branch + "_bn", spec.out_channels, bn));
    }
    a.pool_conv = Conv2d::create(store, name + ".pool", spec.in_channels, spec.out_channels, 1);
    a.pool_bn = BatchNorm2d::create(store, name + ".pool_bn", spec.out_channels, bn);
    const int branches = static_cast<int>(spec.rates.size()) + 1;
    a.fuse = Conv2d::create(store, name + ".fuse", branches * spec.out_channels, spec.out_channels, 1);
    a.fuse_bn = BatchNorm2d::create(store, name + ".fuse_bn", spec.out_channels, bn);
    return a;
}

Tensor Aspp::forward(const Tensor& x, Mode mode) const {
    const Shape& s = x.shape();
    if (s.c != spec.in_channels) {
        throw Error("aspp: channel axis mismatch (got " + std::to_string(s.c) + ", expected " +
                    std::to_string(spec.in_channels) + ")");
    }
    std::vector<Tensor> parts;
    parts.reserve(branches.size() + 1);
    for (std::size_t i = 0; i < branches.size(); ++i) {
        parts.push_back(ops::relu(branch_bn[i](branches[i](x), mode)));
    }
    const Tensor pooled = ops::relu(pool_bn(pool_conv(ops::global_avg_pool(x)), mode));
    parts.push_back(ops::broadcast_spatial(pooled, s.h, s.w));
    return ops::relu(fuse_bn(fuse(ops::concat_channels(parts)), mode));
}

std::array<int, 5> VggEncoder::scaled_widths(double width_mult) {
    if (!(width_mult > 0.0)) throw Error("vgg encoder: width_mult must be positive");
    std::array<int, 5> w{};
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::max(1, static_cast<int>(std::lround(kBaseWidths[i] * width_mult)));
    }
    return w;
}

VggEncoder VggEncoder::create(ParameterStore& store, const std::string& name, int in_channels, double width_mult) {
    VggEncoder e;
    e.widths = scaled_widths(width_mult);
    int in = in_channels;
    for (std::size_t stage = 0; stage < kStageDepth.size(); ++stage) {
        std::vector<Conv2d> convs;
        for (int i = 0; i < kStageDepth[stage]; ++i) {
            convs.push_back(Conv2d::create(store,
                                           name + ".block" + std::to_string(stage + 1) + "_conv" + std::to_string(i + 1),
                                           in, e.widths[stage], 3, {1, 1, 1}));
            in = e.widths[stage];
        }
        e.stages.push_back(std::move(convs));
    }
    return e;
}

EncoderOutput VggEncoder::forward(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.h % 16 != 0 || s.w % 16 != 0) {
        throw Error("vgg encoder: input extent " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                    " not divisible by 16");
    }
    EncoderOutput out;
    Tensor h = x;
    for (std::size_t stage = 0; stage < stages.size(); ++stage) {
        if (stage > 0) h = ops::maxpool2d(h);
        for (const Conv2d& conv : stages[stage]) h = ops::relu(conv(h));
        if (stage < 4) out.skips[stage] = h;
    }
    out.bottleneck = h;
    return out;
}

std::size_t VggEncoder::conv_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.size();
    return n;
}

DecoderBlock DecoderBlock::create(ParameterStore& store, const std::string& name, const ConvBlockSpec& spec,
                                  bool residual, ops::BatchNormOptions bn) {
    return DecoderBlock{ConvBlock::create(store, name, spec, residual, bn)};
}

Tensor DecoderBlock::forward(const Tensor& x, const std::vector<Tensor>& skips, Mode mode) const {
    const Shape& s = x.shape();
    std::vector<Tensor> parts{ops::upsample_bilinear2x(x)};
    for (const Tensor& skip : skips) {
        const Shape& k = skip.shape();
        if (k.h != 2 * s.h || k.w != 2 * s.w) {
            throw Error("decoder block: skip extent " + k.str() + " is not twice the input extent " + s.str());
        }
        parts.push_back(skip);
    }
    return block.forward(ops::concat_channels(parts), mode);
}

}  // namespace ardu
