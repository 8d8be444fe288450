// SPDX-License-Identifier: Apache-2.0

#include "ardu/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ardu/random.hpp"

namespace ardu {

namespace {

void require_rgb(const Tensor& image, const char* what) {
    if (!image.defined()) throw Error(std::string(what) + ": undefined image");
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3 || s.h < 1 || s.w < 1) {
        throw Error(std::string(what) + ": expected a nonempty (1,3,H,W) image, got " + s.str());
    }
}

}  // namespace

void ColorConstancyConfig::validate() const {
    if (!(p >= 1.0)) throw Error("color constancy: p must be >= 1");
    if (target == Target::Fixed && !(level > 0.0 && level <= 1.0)) {
        throw Error("color constancy: fixed level must lie in (0,1]");
    }
}

std::array<double, 3> illuminant(const Tensor& image, double p) {
    require_rgb(image, "illuminant");
    const std::size_t plane = image.shape().plane();
    const auto d = image.data();
    std::array<double, 3> e{};
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += std::pow(static_cast<double>(d[c * plane + i]), p);
        e[c] = std::pow(acc / static_cast<double>(plane), 1.0 / p);
    }
    return e;
}

Tensor shades_of_gray(const Tensor& image, const ColorConstancyConfig& config) {
    config.validate();
    const std::array<double, 3> e = illuminant(image, config.p);
    static const char* kNames[3] = {"red", "green", "blue"};
    for (int c = 0; c < 3; ++c) {
        if (!(e[c] > 0.0)) throw Error(std::string("shades_of_gray: ") + kNames[c] + " channel is all zero");
    }
    const double target =
        config.target == ColorConstancyConfig::Target::Fixed ? config.level : (e[0] + e[1] + e[2]) / 3.0;
    Tensor out = image.detach().clone();
    auto d = out.data();
    const std::size_t plane = image.shape().plane();
    for (int c = 0; c < 3; ++c) {
        const double gain = target / e[c];
        for (std::size_t i = 0; i < plane; ++i) {
            d[c * plane + i] = static_cast<float>(std::clamp(d[c * plane + i] * gain, 0.0, 1.0));
        }
    }
    return out;
}

Centered normalize_center(const Tensor& image) {
    if (!image.defined()) throw Error("normalize_center: undefined image");
    const Shape& s = image.shape();
    const std::size_t plane = s.plane();
    Centered out{image.detach().clone(), {}};
    if (s.c != 3) throw Error("normalize_center: expected 3 channels, got " + s.str());
    auto d = out.image.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < 3; ++c) {
            float* p = d.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            const float mean = static_cast<float>(acc / static_cast<double>(plane));
            for (std::size_t i = 0; i < plane; ++i) p[i] -= mean;
            if (n == 0) out.offsets[c] = mean;
        }
    return out;
}

Tensor uncenter(const Centered& c) {
    Tensor out = c.image.clone();
    const std::size_t plane = out.shape().plane();
    auto d = out.data();
    for (int n = 0; n < out.shape().n; ++n)
        for (int ch = 0; ch < 3; ++ch)
            for (std::size_t i = 0; i < plane; ++i) d[(static_cast<std::size_t>(n) * 3 + ch) * plane + i] += c.offsets[ch];
    return out;
}

void AugmentPolicy::validate() const {
    if (expansion < 1) throw Error("augment: expansion factor must be >= 1");
    if (brightness < 0.0 || brightness > 0.5) throw Error("augment: brightness range must lie in [0,0.5]");
    if (contrast < 0.0 || contrast >= 1.0) throw Error("augment: contrast range must lie in [0,1)");
    if (hsv) throw Error("augment: hsv conversion is reserved and not implemented");
    if (histogram_equalization) throw Error("augment: histogram equalization is reserved and not implemented");
}

AugmentDraw draw_augment(const AugmentPolicy& policy, std::uint64_t seed, int height, int width) {
    policy.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AugmentDraw d;
    // Draw every field unconditionally so the stream layout does not depend on the policy.
    const std::uint64_t turns = rng() % 4;
    const bool h = u(rng) < 0.5;
    const bool v = u(rng) < 0.5;
    const double b = u(rng), k = u(rng);
    if (policy.rot90) d.quarter_turns = height == width ? static_cast<int>(turns) : static_cast<int>(turns & 2);
    d.hflip = policy.hflip && h;
    d.vflip = policy.vflip && v;
    if (policy.brightness_contrast) {
        d.brightness = static_cast<float>((2.0 * b - 1.0) * policy.brightness);
        d.contrast = static_cast<float>(1.0 + (2.0 * k - 1.0) * policy.contrast);
    }
    return d;
}

Tensor flip_horizontal(const Tensor& x) {
    const Shape& s = x.shape();
    Tensor out = Tensor::zeros(s);
    const auto src = x.data();
    auto dst = out.data();
    for (std::size_t plane = 0; plane < static_cast<std::size_t>(s.n) * s.c; ++plane)
        for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx) {
                const std::size_t row = (plane * s.h + y) * s.w;
                dst[row + xx] = src[row + (s.w - 1 - xx)];
            }
    return out;
}

Tensor flip_vertical(const Tensor& x) {
    const Shape& s = x.shape();
    Tensor out = Tensor::zeros(s);
    const auto src = x.data();
    auto dst = out.data();
    for (std::size_t plane = 0; plane < static_cast<std::size_t>(s.n) * s.c; ++plane)
        for (int y = 0; y < s.h; ++y)
            std::copy_n(src.begin() + (plane * s.h + (s.h - 1 - y)) * s.w, s.w, dst.begin() + (plane * s.h + y) * s.w);
    return out;
}

Tensor rotate90(const Tensor& x, int quarter_turns) {
    const int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return x.detach().clone();
    if (q == 2) return flip_vertical(flip_horizontal(x));
    const Shape& s = x.shape();
    const Shape os{s.n, s.c, s.w, s.h};
    Tensor out = Tensor::zeros(os);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int xx = 0; xx < os.w; ++xx) {
                    // q == 1: out(y, x) = in(x, W-1-y); q == 3: out(y, x) = in(H-1-x, y)
                    out.at(n, c, y, xx) = q == 1 ? x.at(n, c, xx, s.w - 1 - y) : x.at(n, c, s.h - 1 - xx, y);
                }
    return out;
}

ImageSample apply_augment(const ImageSample& sample, const AugmentDraw& draw) {
    auto geometric = [&](const Tensor& t) {
        Tensor r = rotate90(t, draw.quarter_turns);
        if (draw.hflip) r = flip_horizontal(r);
        if (draw.vflip) r = flip_vertical(r);
        return r;
    };
    ImageSample out{geometric(sample.image), geometric(sample.mask), sample.id};
    if (draw.brightness != 0.0f || draw.contrast != 1.0f) {
        for (float& v : out.image.data()) {
            v = std::clamp((v - 0.5f) * draw.contrast + 0.5f + draw.brightness, 0.0f, 1.0f);
        }
    }
    return out;
}

ImageSample augment(const ImageSample& sample, const AugmentPolicy& policy, std::uint64_t seed) {
    return apply_augment(sample, draw_augment(policy, seed, sample.height(), sample.width()));
}

Dataset augment_expand(const Dataset& data, const AugmentPolicy& policy, std::uint64_t seed) {
    policy.validate();
    Dataset out;
    out.reserve(data.size() * static_cast<std::size_t>(policy.expansion));
    for (const ImageSample& s : data) out.push_back(s.clone());
    for (int k = 1; k < policy.expansion; ++k) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            ImageSample a = augment(data[i], policy, derive_seed(seed, i, static_cast<std::uint64_t>(k)));
            a.id = data[i].id + "_aug" + std::to_string(k);
            out.push_back(std::move(a));
        }
    }
    return out;
}

Dataset prepare_for_model(const Dataset& data, bool color_constancy, const ColorConstancyConfig& config) {
    Dataset out;
    out.reserve(data.size());
    for (const ImageSample& s : data) {
        const Tensor balanced = color_constancy ? shades_of_gray(s.image, config) : s.image;
        out.push_back({normalize_center(balanced).image, s.mask, s.id});
    }
    return out;
}

}  // namespace ardu
