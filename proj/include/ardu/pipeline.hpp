// SPDX-License-Identifier: Apache-2.0
//
// Preprocessing (shades-of-gray colour constancy, per-image centering) and
// data augmentation. Order used by the trainer: constancy, augment, center.

#pragma once

#include <array>
#include <cstdint>

#include "ardu/dataio.hpp"

namespace ardu {

struct ColorConstancyConfig {
    enum class Target {
        ChannelMean,  // rescale every channel to the mean of the three illuminant estimates
        Fixed,        // rescale every channel to `level`
    };

    double p = 6.0;
    Target target = Target::ChannelMean;
    double level = 0.5;

    void validate() const;
};

/// Minkowski p-mean of each channel of a (1,3,H,W) image, accumulated in double.
std::array<double, 3> illuminant(const Tensor& image, double p);

/// Scales channel c by target / e_c and clamps to [0,1]. Throws on an
/// all-zero channel.
Tensor shades_of_gray(const Tensor& image, const ColorConstancyConfig& config = {});

struct Centered {
    Tensor image;
    std::array<float, 3> offsets{};  // add back to invert
};

/// Subtracts the image's own per-channel mean.
Centered normalize_center(const Tensor& image);
Tensor uncenter(const Centered& c);

struct AugmentPolicy {
    bool rot90 = true;
    bool hflip = true;
    bool vflip = true;
    bool brightness_contrast = true;
    double brightness = 0.1;  // additive shift drawn from [-b, b]
    double contrast = 0.1;    // gain drawn from [1-c, 1+c] about 0.5
    int expansion = 1;
    // Reserved; enabling either is rejected by validate().
    bool hsv = false;
    bool histogram_equalization = false;

    void validate() const;
};

struct AugmentDraw {
    int quarter_turns = 0;  // counter-clockwise; only 0 or 2 for non-square extents
    bool hflip = false;
    bool vflip = false;
    float brightness = 0.0f;
    float contrast = 1.0f;

    bool geometric_identity() const { return quarter_turns == 0 && !hflip && !vflip; }
};

AugmentDraw draw_augment(const AugmentPolicy& policy, std::uint64_t seed, int height, int width);
/// Geometric ops hit image and mask identically; photometric ops the image only.
ImageSample apply_augment(const ImageSample& sample, const AugmentDraw& draw);
ImageSample augment(const ImageSample& sample, const AugmentPolicy& policy, std::uint64_t seed);

/// Geometric primitives on any (N,C,H,W) tensor.
Tensor flip_horizontal(const Tensor& x);
Tensor flip_vertical(const Tensor& x);
Tensor rotate90(const Tensor& x, int quarter_turns);

/// Originals once, followed by expansion-1 augmented copies of each sample,
/// each with its own derived seed.
Dataset augment_expand(const Dataset& data, const AugmentPolicy& policy, std::uint64_t seed);

/// Colour constancy (optional) followed by centering, per sample. Masks are shared, not copied.
Dataset prepare_for_model(const Dataset& data, bool color_constancy, const ColorConstancyConfig& config = {});

}  // namespace ardu
