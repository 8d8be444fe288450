// SPDX-License-Identifier: Apache-2.0

#include "ardu/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "ardu/random.hpp"

namespace ardu {

void ImageSample::validate() const {
    if (!image.defined() || !mask.defined()) throw Error("sample '" + id + "': missing image or mask");
    const Shape& is = image.shape();
    const Shape& ms = mask.shape();
    if (is.n != 1 || is.c != 3) throw Error("sample '" + id + "': image must be (1,3,H,W), got " + is.str());
    if (ms.n != 1 || ms.c != 1) throw Error("sample '" + id + "': mask must be (1,1,H,W), got " + ms.str());
    if (is.h != ms.h || is.w != ms.w) {
        throw Error("sample '" + id + "': image extent " + is.str() + " differs from mask extent " + ms.str());
    }
    for (float v : mask.data()) {
        if (v != 0.0f && v != 1.0f) throw Error("sample '" + id + "': mask is not binary");
    }
}

std::uint8_t quantize(float v) {
    const double q = std::floor(static_cast<double>(v) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

namespace {

struct RawPng {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

RawPng read_png(const std::filesystem::path& path, png_uint_32 format, int channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw Error("cannot read PNG '" + path.string() + "': " + img.message);
    }
    img.format = format;
    RawPng out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.pixels.resize(static_cast<std::size_t>(img.width) * img.height * channels);
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error("cannot decode PNG '" + path.string() + "': " + msg);
    }
    return out;
}

void write_png(const std::filesystem::path& path, int width, int height, png_uint_32 format,
               const std::vector<std::uint8_t>& pixels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
        throw Error("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

}  // namespace

Tensor read_image_png(const std::filesystem::path& path) {
    const RawPng raw = read_png(path, PNG_FORMAT_RGB, 3);
    Tensor t = Tensor::zeros({1, 3, raw.height, raw.width});
    auto d = t.data();
    const std::size_t plane = static_cast<std::size_t>(raw.height) * raw.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) d[c * plane + p] = raw.pixels[p * 3 + c] / 255.0f;
    return t;
}

Tensor read_mask_png(const std::filesystem::path& path) {
    const RawPng raw = read_png(path, PNG_FORMAT_GRAY, 1);
    Tensor t = Tensor::zeros({1, 1, raw.height, raw.width});
    auto d = t.data();
    for (std::size_t p = 0; p < raw.pixels.size(); ++p) d[p] = raw.pixels[p] >= 128 ? 1.0f : 0.0f;
    return t;
}

void write_image_png(const std::filesystem::path& path, const Tensor& image) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw Error("write_image_png: expected (1,3,H,W), got " + s.str());
    const auto d = image.data();
    const std::size_t plane = s.plane();
    std::vector<std::uint8_t> px(plane * 3);
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) px[p * 3 + c] = quantize(d[c * plane + p]);
    write_png(path, s.w, s.h, PNG_FORMAT_RGB, px);
}

void write_mask_png(const std::filesystem::path& path, const Tensor& mask, double threshold) {
    const Shape& s = mask.shape();
    if (s.n != 1 || s.c != 1) throw Error("write_mask_png: expected (1,1,H,W), got " + s.str());
    std::vector<std::uint8_t> px(s.plane());
    const auto d = mask.data();
    for (std::size_t p = 0; p < px.size(); ++p) px[p] = d[p] >= threshold ? 255 : 0;
    write_png(path, s.w, s.h, PNG_FORMAT_GRAY, px);
}

ImageSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path) {
    ImageSample s{read_image_png(image_path), read_mask_png(mask_path), image_path.stem().string()};
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

bool Ellipse::contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
}

namespace {

constexpr int kSuper = 4;

double normalized_radius(const Ellipse& e, double y, double x) {
    const double dy = y - e.cy, dx = x - e.cx;
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    const double u = (dx * c + dy * s) / e.rx;
    const double v = (-dx * s + dy * c) / e.ry;
    return std::sqrt(u * u + v * v);
}

double hash_unit(std::uint64_t seed, std::uint64_t i) {
    return static_cast<double>(splitmix64(seed ^ (i * 0x9e3779b97f4a7c15ULL)) >> 11) * 0x1.0p-53;
}

SyntheticScene candidate_scene(const SyntheticOptions& opt, std::mt19937_64& rng, bool low_contrast) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    SyntheticScene s;
    s.background = {range(0.45, 0.75), range(0.30, 0.55), range(0.25, 0.50)};
    s.tint = {range(0.6, 1.0), range(0.6, 1.0), range(0.6, 1.0)};
    s.texture_amp = range(0.02, 0.07);
    s.contrast = low_contrast ? range(0.45, 0.65) : 1.0;
    s.texture_seed = rng();
    const int count = 1 + static_cast<int>(rng() % 3);
    const double m = std::min(opt.height, opt.width);
    for (int i = 0; i < count; ++i) {
        Ellipse e;
        e.cy = range(0.15, 0.85) * opt.height;
        e.cx = range(0.15, 0.85) * opt.width;
        e.ry = range(0.07, 0.25) * m;
        e.rx = range(0.07, 0.25) * m;
        e.angle = range(0.0, std::numbers::pi);
        e.color = {range(0.70, 0.95), range(0.10, 0.30), range(0.10, 0.30)};
        s.ellipses.push_back(e);
    }
    return s;
}

}  // namespace

std::vector<float> scene_coverage(const SyntheticScene& scene, int height, int width) {
    std::vector<float> cov(static_cast<std::size_t>(height) * width, 0.0f);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double py = y + (sy + 0.5) / kSuper;
                    const double px = x + (sx + 0.5) / kSuper;
                    for (const Ellipse& e : scene.ellipses) {
                        if (e.contains(py, px)) {
                            ++hits;
                            break;
                        }
                    }
                }
            cov[static_cast<std::size_t>(y) * width + x] = static_cast<float>(hits) / (kSuper * kSuper);
        }
    return cov;
}

Tensor rasterize_mask(const SyntheticScene& scene, int height, int width) {
    std::vector<float> cov = scene_coverage(scene, height, width);
    for (float& v : cov) v = v >= 0.5f ? 1.0f : 0.0f;
    return Tensor::from_data({1, 1, height, width}, std::move(cov));
}

SyntheticScene draw_scene(const SyntheticOptions& opt, std::uint64_t seed, std::size_t index) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        std::mt19937_64 rng(derive_seed(seed, index, attempt));
        const bool low = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < opt.low_contrast_rate;
        SyntheticScene s = candidate_scene(opt, rng, low);
        const std::vector<float> cov = scene_coverage(s, opt.height, opt.width);
        const auto fg = std::count_if(cov.begin(), cov.end(), [](float v) { return v >= 0.5f; });
        const double frac = static_cast<double>(fg) / static_cast<double>(cov.size());
        if (frac >= opt.min_fraction && frac <= opt.max_fraction) return s;
        if (attempt > 10000) throw Error("synthetic: cannot satisfy foreground fraction bounds");
    }
}

ImageSample render_scene(const SyntheticScene& scene, int height, int width, std::string id) {
    Tensor image = Tensor::zeros({1, 3, height, width});
    auto d = image.data();
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    // Low-frequency texture: two oriented waves with seeded phase plus pixel noise.
    const double f1 = 0.05 + 0.10 * hash_unit(scene.texture_seed, 1), f2 = 0.05 + 0.10 * hash_unit(scene.texture_seed, 2);
    const double p1 = 6.283 * hash_unit(scene.texture_seed, 3), p2 = 6.283 * hash_unit(scene.texture_seed, 4);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            const double wave = 0.5 * (std::sin(f1 * x + p1) + std::sin(f2 * (x + y) + p2));
            const double noise = hash_unit(scene.texture_seed, 16 + p) - 0.5;
            const double tex = scene.texture_amp * wave + 0.04 * noise;
            const double py = y + 0.5, px = x + 0.5;
            // Soft edge: opacity ramps across normalized radius 0.85..1.15.
            double alpha = 0.0;
            const Ellipse* top = nullptr;
            for (const Ellipse& e : scene.ellipses) {
                const double r = normalized_radius(e, py, px);
                const double a = std::clamp((1.15 - r) / 0.3, 0.0, 1.0);
                if (a > alpha) {
                    alpha = a;
                    top = &e;
                }
            }
            for (int c = 0; c < 3; ++c) {
                double v = scene.background[c] + tex;
                if (top) {
                    const double shade = 1.0 - 0.25 * std::min(1.0, normalized_radius(*top, py, px));
                    const double fg = scene.background[c] + scene.contrast * (top->color[c] * shade - scene.background[c]);
                    v = (1.0 - alpha) * v + alpha * (fg + 0.5 * tex);
                }
                d[c * plane + p] = static_cast<float>(std::clamp(v * scene.tint[c], 0.0, 1.0));
            }
        }
    return {std::move(image), rasterize_mask(scene, height, width), std::move(id)};
}

Dataset gen_synthetic(std::size_t n, const SyntheticOptions& opt, std::uint64_t seed) {
    if (opt.height <= 0 || opt.width <= 0 || opt.height % 16 != 0 || opt.width % 16 != 0) {
        throw Error("synthetic: extent " + std::to_string(opt.height) + "x" + std::to_string(opt.width) +
                    " must be positive and divisible by 16");
    }
    Dataset out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "s%05zu", i);
        out.push_back(render_scene(draw_scene(opt, seed, i), opt.height, opt.width, id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits and dataset directories.

void SplitSpec::validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw Error("split: fractions must be nonnegative and sum to 1");
    }
}

Splits split_dataset(const Dataset& data, const SplitSpec& spec) {
    spec.validate();
    const std::size_t n = data.size();
    if (n < 10) throw Error("split: need at least 10 samples, got " + std::to_string(n));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(derive_seed(spec.seed, fnv1a("split")));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
    const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(n) + 1e-9));
    Splits s;
    for (std::size_t i = 0; i < n; ++i) {
        Dataset& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
        dst.push_back(data[idx[i]]);
    }
    return s;
}

Dataset& split_by_name(Splits& s, const std::string& name) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    throw Error("unknown split '" + name + "' (expected train, val or test)");
}

void write_dataset(const std::filesystem::path& dir, const Splits& splits) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::ofstream manifest(dir / "manifest.tsv");
    if (!manifest) throw Error("cannot write manifest in '" + dir.string() + "'");
    const std::pair<const char*, const Dataset*> parts[] = {
        {"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}};
    for (const auto& [name, data] : parts) {
        for (const ImageSample& s : *data) {
            write_image_png(dir / "images" / (s.id + ".png"), s.image);
            write_mask_png(dir / "masks" / (s.id + ".png"), s.mask);
            manifest << s.id << '\t' << name << '\n';
        }
    }
    if (!manifest) throw Error("write failed for manifest in '" + dir.string() + "'");
}

Splits read_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.tsv");
    if (!manifest) throw Error("dataset '" + dir.string() + "': missing manifest.tsv");
    Splits s;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, split;
        if (!(ls >> id >> split)) {
            throw Error("dataset '" + dir.string() + "': malformed manifest line " + std::to_string(lineno));
        }
        if (!seen.insert(id).second) throw Error("dataset '" + dir.string() + "': duplicate id '" + id + "'");
        ImageSample sample = load_sample(dir / "images" / (id + ".png"), dir / "masks" / (id + ".png"));
        sample.id = id;
        split_by_name(s, split).push_back(std::move(sample));
    }
    return s;
}

}  // namespace ardu
