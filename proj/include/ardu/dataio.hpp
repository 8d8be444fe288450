// SPDX-License-Identifier: Apache-2.0
//
// PNG image/mask I/O, dataset splits and the synthetic lesion generator.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ardu/tensor.hpp"

namespace ardu {

/// image (1,3,H,W) in [0,1]; mask (1,1,H,W) with values in {0,1}.
struct ImageSample {
    Tensor image;
    Tensor mask;
    std::string id;

    int height() const { return image.shape().h; }
    int width() const { return image.shape().w; }
    /// Throws when extents disagree or the mask is not binary.
    void validate() const;
    ImageSample clone() const { return {image.clone(), mask.clone(), id}; }
};

using Dataset = std::vector<ImageSample>;

// PNG. Images are 8-bit RGB, masks 8-bit grayscale. Values are quantized with
// round-half-up on write.
Tensor read_image_png(const std::filesystem::path& path);
/// Binarized at 128.
Tensor read_mask_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Tensor& image);
/// Values >= threshold are written as 255, others as 0.
void write_mask_png(const std::filesystem::path& path, const Tensor& mask, double threshold = 0.5);
std::uint8_t quantize(float v);

ImageSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path);

// Synthetic data.

struct Ellipse {
    double cy = 0, cx = 0;  // centre, pixels
    double ry = 1, rx = 1;  // semi-axes, pixels
    double angle = 0;       // radians
    std::array<double, 3> color{};

    bool contains(double y, double x) const;
};

struct SyntheticScene {
    std::array<double, 3> background{};  // base colour before tint
    std::array<double, 3> tint{};        // global per-channel illuminant
    double texture_amp = 0.0;
    double contrast = 1.0;  // foreground/background separation, < 1 for faint lesions
    std::uint64_t texture_seed = 0;
    std::vector<Ellipse> ellipses;
};

struct SyntheticOptions {
    int height = 64;
    int width = 64;
    double min_fraction = 0.02;
    double max_fraction = 0.40;
    double low_contrast_rate = 0.2;
};

/// Deterministic scene for sample `index` of a dataset drawn with `seed`.
SyntheticScene draw_scene(const SyntheticOptions& opt, std::uint64_t seed, std::size_t index);
/// Fraction of each pixel covered by the union of ellipses, from a fixed 4x4 supersampling grid.
std::vector<float> scene_coverage(const SyntheticScene& scene, int height, int width);
/// Mask = coverage >= 0.5.
Tensor rasterize_mask(const SyntheticScene& scene, int height, int width);
ImageSample render_scene(const SyntheticScene& scene, int height, int width, std::string id);
Dataset gen_synthetic(std::size_t n, const SyntheticOptions& opt, std::uint64_t seed);

// Splits.

struct SplitSpec {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Seeded shuffle, then contiguous partition of sizes floor(train n), floor(val n), remainder.
Splits split_dataset(const Dataset& data, const SplitSpec& spec);

// Dataset directory: images/<id>.png, masks/<id>.png and manifest.tsv
// ("id<TAB>split" per line).

void write_dataset(const std::filesystem::path& dir, const Splits& splits);
Splits read_dataset(const std::filesystem::path& dir);
/// One split by name: train, val or test.
Dataset& split_by_name(Splits& s, const std::string& name);

}  // namespace ardu
