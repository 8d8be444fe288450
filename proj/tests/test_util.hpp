// SPDX-License-Identifier: Apache-2.0
//
// Test-only helpers: random tensors, brute-force oracles and a central
// finite-difference gradient checker. Oracles accumulate in double and never
// call into the library's kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ardu/ops.hpp"
#include "ardu/tensor.hpp"

namespace ardu::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f,
                            bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> data(shape.numel());
    for (float& v : data) v = dist(rng);
    return Tensor::from_data(shape, std::move(data), requires_grad);
}

/// Random values bounded away from zero, for ops with a kink at the origin.
inline Tensor random_away_from_zero(Shape shape, std::uint64_t seed, float margin = 0.05f,
                                    bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> mag(margin, 1.0f);
    std::bernoulli_distribution sign(0.5);
    std::vector<float> data(shape.numel());
    for (float& v : data) v = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor::from_data(shape, std::move(data), requires_grad);
}

/// Distinct values spaced by at least `gap`, shuffled: no ties inside pooling windows.
inline Tensor random_distinct(Shape shape, std::uint64_t seed, float gap = 0.01f,
                              bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::vector<float> data(shape.numel());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i) * gap - 1.0f;
    std::shuffle(data.begin(), data.end(), rng);
    return Tensor::from_data(shape, std::move(data), requires_grad);
}

inline float max_abs_diff(std::span<const float> a, std::span<const float> b) {
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Max difference measured against the reference magnitude (floored at 1).
inline float max_scaled_diff(std::span<const float> a, std::span<const float> ref) {
    float scale = 1.0f;
    for (float v : ref) scale = std::max(scale, std::abs(v));
    return max_abs_diff(a, ref) / scale;
}

inline bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Brute-force oracles.

inline std::vector<float> conv2d_oracle(const Tensor& x, const Tensor& k, const Tensor& b,
                                        int stride, int pad, int dil) {
    const Shape xs = x.shape();
    const Shape ks = k.shape();
    const int ho = (xs.h + 2 * pad - dil * (ks.h - 1) - 1) / stride + 1;
    const int wo = (xs.w + 2 * pad - dil * (ks.w - 1) - 1) / stride + 1;
    std::vector<float> out(static_cast<std::size_t>(xs.n) * ks.n * ho * wo);
    std::size_t o = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ks.n; ++co)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++o) {
                    double acc = b.defined() ? b.data()[co] : 0.0;
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int ky = 0; ky < ks.h; ++ky)
                            for (int kx = 0; kx < ks.w; ++kx) {
                                const int iy = oy * stride - pad + ky * dil;
                                const int ix = ox * stride - pad + kx * dil;
                                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                                acc += static_cast<double>(x.at(n, ci, iy, ix)) * k.at(co, ci, ky, kx);
                            }
                    out[o] = static_cast<float>(acc);
                }
    return out;
}

inline std::vector<float> maxpool_oracle(const Tensor& x, int window, int stride) {
    const Shape s = x.shape();
    const int ho = (s.h - window) / stride + 1;
    const int wo = (s.w - window) / stride + 1;
    std::vector<float> out;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    float m = -INFINITY;
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx)
                            m = std::max(m, x.at(n, c, oy * stride + ky, ox * stride + kx));
                    out.push_back(m);
                }
    return out;
}

/// Half-pixel-centre bilinear formula evaluated independently per output cell.
inline double bilinear_sample(const Tensor& x, int n, int c, double sy, double sx) {
    const Shape s = x.shape();
    sy = std::clamp(sy, 0.0, static_cast<double>(s.h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(s.w - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min(y0 + 1, s.h - 1);
    const int x1 = std::min(x0 + 1, s.w - 1);
    const double fy = sy - y0;
    const double fx = sx - x0;
    return (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
           fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
}

inline std::vector<float> upsample_oracle(const Tensor& x) {
    const Shape s = x.shape();
    std::vector<float> out;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < 2 * s.h; ++oy)
                for (int ox = 0; ox < 2 * s.w; ++ox) {
                    const double sy = (oy + 0.5) / 2.0 - 0.5;
                    const double sx = (ox + 0.5) / 2.0 - 0.5;
                    out.push_back(static_cast<float>(bilinear_sample(x, n, c, sy, sx)));
                }
    return out;
}

inline std::vector<float> gap_oracle(const Tensor& x) {
    const Shape s = x.shape();
    std::vector<float> out;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) acc += x.at(n, c, y, xx);
            out.push_back(static_cast<float>(acc / (s.h * s.w)));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences.

struct GradCheck {
    double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    bool finite = true;
};

/// Checks d/d(inputs) of L = sum(f(inputs) * R) for a fixed random R, comparing
/// backward() against central differences with step `h`. `f` is re-evaluated
/// with the inputs perturbed in place.
inline GradCheck check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                 std::uint64_t seed, double h = 1e-3) {
    Tensor probe = f();
    const Tensor weights = random_tensor(probe.shape(), seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto& t : inputs) t.zero_grad();
    Tensor loss = ops::sum(ops::mul(f(), weights));
    loss.backward();

    auto objective = [&]() {
        NoGradGuard guard;
        const Tensor out = f();
        double acc = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) acc += static_cast<double>(out.data()[i]) * weights.data()[i];
        return acc;
    };

    GradCheck result;
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (auto& t : inputs) {
        std::vector<float> analytic(t.grad().begin(), t.grad().end());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const float orig = t.data()[i];
            const float hi = orig + static_cast<float>(h);
            const float lo = orig - static_cast<float>(h);
            t.data()[i] = hi;
            const double up = objective();
            t.data()[i] = lo;
            const double down = objective();
            t.data()[i] = orig;
            // Divide by the step actually representable in float.
            const double numeric = (up - down) / (static_cast<double>(hi) - lo);
            result.finite = result.finite && std::isfinite(numeric) && std::isfinite(analytic[i]);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            an2 += static_cast<double>(analytic[i]) * analytic[i];
            nu2 += numeric * numeric;
        }
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), 1e-12});
    result.rel_error = std::sqrt(diff2) / denom;
    return result;
}

}  // namespace ardu::testing
