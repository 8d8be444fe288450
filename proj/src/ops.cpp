// SPDX-License-Identifier: Apache-2.0

#include "ardu/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace ardu::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::string axis_mismatch(const char* op, const char* axis, int got, int want) {
    return std::string(op) + ": " + axis + " axis mismatch (got " + std::to_string(got) +
           ", expected " + std::to_string(want) + ")";
}

struct ConvGeometry {
    int cin, h, w;
    int cout, kh, kw;
    int ho, wo;
    int stride, pad, dil;

    int patch() const { return cin * kh * kw; }
    int pixels() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const float* x, const ConvGeometry& g, float* cols) {
    const int pixels = g.pixels();
    for (int ci = 0; ci < g.cin; ++ci) {
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                float* dst = cols + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * pixels;
                const int xoff = kx * g.dil - g.pad;
                // Output columns whose input column is in range.
                int ox_lo = 0, ox_hi = g.wo;
                if (g.stride == 1) {
                    ox_lo = std::clamp(-xoff, 0, g.wo);
                    ox_hi = std::clamp(g.w - xoff, ox_lo, g.wo);
                }
                for (int oy = 0; oy < g.ho; ++oy) {
                    float* row = dst + static_cast<std::size_t>(oy) * g.wo;
                    const int iy = oy * g.stride - g.pad + ky * g.dil;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(row, row + g.wo, 0.0f);
                        continue;
                    }
                    const float* src = x + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
                    if (g.stride == 1) {
                        std::fill(row, row + ox_lo, 0.0f);
                        std::memcpy(row + ox_lo, src + ox_lo + xoff,
                                    sizeof(float) * static_cast<std::size_t>(ox_hi - ox_lo));
                        std::fill(row + ox_hi, row + g.wo, 0.0f);
                    } else {
                        for (int ox = 0; ox < g.wo; ++ox) {
                            const int ix = ox * g.stride + xoff;
                            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* dx) {
    const int pixels = g.pixels();
    for (int ci = 0; ci < g.cin; ++ci) {
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const float* src =
                    cols + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * pixels;
                const int xoff = kx * g.dil - g.pad;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dil;
                    if (iy < 0 || iy >= g.h) continue;
                    const float* row = src + static_cast<std::size_t>(oy) * g.wo;
                    float* dst = dx + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride + xoff;
                        if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

void require_defined(const Tensor& t, const char* op, const char* what) {
    if (!t.defined()) throw Error(std::string(op) + ": " + what + " is undefined");
}

enum class Broadcast { Same, ChannelMap, PerChannel };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
    require_defined(a, op, "left operand");
    require_defined(b, op, "right operand");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return Broadcast::Same;
    if (sb.n == sa.n && sb.c == 1 && sb.h == sa.h && sb.w == sa.w) return Broadcast::ChannelMap;
    if (sb.n == sa.n && sb.c == sa.c && sb.h == 1 && sb.w == 1) return Broadcast::PerChannel;
    throw Error(std::string(op) + ": incompatible shapes " + sa.str() + " and " + sb.str());
}

// Index into `b` for flat index `i` of `a` under the broadcast rule.
struct BroadcastIndex {
    Broadcast kind;
    Shape sa;
    std::size_t operator()(std::size_t i) const {
        switch (kind) {
            case Broadcast::Same: return i;
            case Broadcast::ChannelMap: {
                const std::size_t plane = sa.plane();
                const std::size_t n = i / (plane * sa.c);
                return n * plane + i % plane;
            }
            case Broadcast::PerChannel: return i / sa.plane();
        }
        return i;
    }
};

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions o) {
    require_defined(input, "conv2d", "input");
    require_defined(kernel, "conv2d", "kernel");
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    if (ks.c != xs.c) throw Error(axis_mismatch("conv2d", "channel", xs.c, ks.c));
    if (o.stride < 1) throw Error("conv2d: stride must be >= 1, got " + std::to_string(o.stride));
    if (o.dilation < 1) throw Error("conv2d: dilation must be >= 1, got " + std::to_string(o.dilation));
    if (o.padding < 0) throw Error("conv2d: padding must be >= 0");
    if (bias.defined() && bias.numel() != static_cast<std::size_t>(ks.n)) {
        throw Error(axis_mismatch("conv2d", "bias", static_cast<int>(bias.numel()), ks.n));
    }
    const int span_h = o.dilation * (ks.h - 1) + 1;
    const int span_w = o.dilation * (ks.w - 1) + 1;
    const int num_h = xs.h + 2 * o.padding - span_h;
    const int num_w = xs.w + 2 * o.padding - span_w;
    if (num_h < 0 || ks.h < 1) throw Error("conv2d: zero-sized output along height axis");
    if (num_w < 0 || ks.w < 1) throw Error("conv2d: zero-sized output along width axis");

    ConvGeometry g{xs.c, xs.h, xs.w, ks.n, ks.h, ks.w,
                   num_h / o.stride + 1, num_w / o.stride + 1, o.stride, o.padding, o.dilation};
    const Shape out_shape{xs.n, g.cout, g.ho, g.wo};
    if (out_shape.numel() == 0) throw Error("conv2d: zero-sized output " + out_shape.str());

    std::vector<float> out(out_shape.numel());
    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(g.cout) * g.pixels();
    ConstMatMap weights(kernel.data().data(), g.cout, g.patch());
    std::vector<float> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch()) * g.pixels());
    for (int n = 0; n < xs.n; ++n) {
        const float* x = input.data().data() + n * in_stride;
        if (!g.pointwise()) im2col(x, g, cols.data());
        ConstMatMap patches(g.pointwise() ? x : cols.data(), g.patch(), g.pixels());
        MatMap result(out.data() + n * out_stride, g.cout, g.pixels());
        result.noalias() = weights * patches;
        if (bias.defined()) {
            const auto b = bias.data();
            for (int c = 0; c < g.cout; ++c) result.row(c).array() += b[c];
        }
    }

    auto x_impl = input.impl();
    auto k_impl = kernel.impl();
    auto b_impl = bias.defined() ? bias.impl() : nullptr;
    return detail::make_result(
        out_shape, std::move(out), OpKind::Conv2d, {&input, &kernel, &bias},
        [x_impl, k_impl, b_impl, g, in_stride, out_stride](const detail::TensorImpl& y) {
            const int batch = x_impl->shape.n;
            ConstMatMap weights(k_impl->data.data(), g.cout, g.patch());
            std::vector<float> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch()) * g.pixels());
            std::vector<float> dcols(x_impl->requires_grad && !g.pointwise() ? cols.size() : 0);
            for (int n = 0; n < batch; ++n) {
                ConstMatMap dy(y.grad.data() + n * out_stride, g.cout, g.pixels());
                const float* x = x_impl->data.data() + n * in_stride;
                if (k_impl->requires_grad) {
                    if (!g.pointwise()) im2col(x, g, cols.data());
                    ConstMatMap patches(g.pointwise() ? x : cols.data(), g.patch(), g.pixels());
                    MatMap dw(k_impl->grad_buffer().data(), g.cout, g.patch());
                    dw.noalias() += dy * patches.transpose();
                }
                if (b_impl && b_impl->requires_grad) {
                    auto& db = b_impl->grad_buffer();
                    // Fixed-order sum: Eigen's vectorised reduction depends on buffer alignment.
                    const float* row = y.grad.data() + n * out_stride;
                    for (int c = 0; c < g.cout; ++c, row += g.pixels()) {
                        double acc = 0.0;
                        for (int p = 0; p < g.pixels(); ++p) acc += row[p];
                        db[c] += static_cast<float>(acc);
                    }
                }
                if (x_impl->requires_grad) {
                    float* dx = x_impl->grad_buffer().data() + n * in_stride;
                    if (g.pointwise()) {
                        MatMap dxm(dx, g.cin, g.pixels());
                        dxm.noalias() += weights.transpose() * dy;
                    } else {
                        MatMap dc(dcols.data(), g.patch(), g.pixels());
                        dc.noalias() = weights.transpose() * dy;
                        col2im_add(dcols.data(), g, dx);
                    }
                }
            }
        });
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
    require_defined(input, "maxpool2d", "input");
    const Shape& s = input.shape();
    if (window < 1 || stride < 1) throw Error("maxpool2d: window and stride must be >= 1");
    if (window > s.h) throw Error(axis_mismatch("maxpool2d", "height", s.h, window) + ": window larger than input");
    if (window > s.w) throw Error(axis_mismatch("maxpool2d", "width", s.w, window) + ": window larger than input");
    const int ho = (s.h - window) / stride + 1;
    const int wo = (s.w - window) / stride + 1;
    const Shape out_shape{s.n, s.c, ho, wo};
    std::vector<float> out(out_shape.numel());
    std::vector<std::uint32_t> argmax(out.size());
    const auto x = input.data();
    std::size_t o = 0;
    for (int p = 0; p < s.n * s.c; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * s.plane();
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++o) {
                std::size_t best = base + static_cast<std::size_t>(oy * stride) * s.w + ox * stride;
                for (int ky = 0; ky < window; ++ky) {
                    for (int kx = 0; kx < window; ++kx) {
                        const std::size_t idx =
                            base + static_cast<std::size_t>(oy * stride + ky) * s.w + ox * stride + kx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                out[o] = x[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    auto x_impl = input.impl();
    return detail::make_result(out_shape, std::move(out), OpKind::MaxPool2d, {&input},
                               [x_impl, argmax = std::move(argmax)](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += y.grad[i];
                               });
}

namespace {

struct Interp {
    std::vector<int> lo, hi;
    std::vector<float> wlo, whi;
};

Interp upsample_table(int in) {
    Interp t;
    const int out = 2 * in;
    t.lo.resize(out);
    t.hi.resize(out);
    t.wlo.resize(out);
    t.whi.resize(out);
    for (int o = 0; o < out; ++o) {
        float src = (static_cast<float>(o) + 0.5f) * 0.5f - 0.5f;
        if (src < 0.0f) src = 0.0f;
        const int i0 = std::min(static_cast<int>(src), in - 1);
        const int i1 = std::min(i0 + 1, in - 1);
        const float frac = src - static_cast<float>(i0);
        t.lo[o] = i0;
        t.hi[o] = i1;
        t.wlo[o] = 1.0f - frac;
        t.whi[o] = frac;
    }
    return t;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& input) {
    require_defined(input, "upsample_bilinear2x", "input");
    const Shape& s = input.shape();
    if (s.h < 1 || s.w < 1) throw Error("upsample_bilinear2x: empty spatial extent " + s.str());
    const Shape out_shape{s.n, s.c, 2 * s.h, 2 * s.w};
    const Interp ty = upsample_table(s.h);
    const Interp tx = upsample_table(s.w);
    std::vector<float> out(out_shape.numel());
    const auto x = input.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* src = x.data() + static_cast<std::size_t>(p) * s.plane();
        float* dst = out.data() + static_cast<std::size_t>(p) * out_shape.plane();
        for (int oy = 0; oy < out_shape.h; ++oy) {
            const float* r0 = src + static_cast<std::size_t>(ty.lo[oy]) * s.w;
            const float* r1 = src + static_cast<std::size_t>(ty.hi[oy]) * s.w;
            for (int ox = 0; ox < out_shape.w; ++ox) {
                const float top = tx.wlo[ox] * r0[tx.lo[ox]] + tx.whi[ox] * r0[tx.hi[ox]];
                const float bot = tx.wlo[ox] * r1[tx.lo[ox]] + tx.whi[ox] * r1[tx.hi[ox]];
                dst[static_cast<std::size_t>(oy) * out_shape.w + ox] = ty.wlo[oy] * top + ty.whi[oy] * bot;
            }
        }
    }
    auto x_impl = input.impl();
    return detail::make_result(
        out_shape, std::move(out), OpKind::Upsample2x, {&input},
        [x_impl, ty, tx, s, out_shape](const detail::TensorImpl& y) {
            auto& dx = x_impl->grad_buffer();
            for (int p = 0; p < s.n * s.c; ++p) {
                float* d = dx.data() + static_cast<std::size_t>(p) * s.plane();
                const float* g = y.grad.data() + static_cast<std::size_t>(p) * out_shape.plane();
                for (int oy = 0; oy < out_shape.h; ++oy) {
                    float* r0 = d + static_cast<std::size_t>(ty.lo[oy]) * s.w;
                    float* r1 = d + static_cast<std::size_t>(ty.hi[oy]) * s.w;
                    for (int ox = 0; ox < out_shape.w; ++ox) {
                        const float v = g[static_cast<std::size_t>(oy) * out_shape.w + ox];
                        r0[tx.lo[ox]] += ty.wlo[oy] * tx.wlo[ox] * v;
                        r0[tx.hi[ox]] += ty.wlo[oy] * tx.whi[ox] * v;
                        r1[tx.lo[ox]] += ty.whi[oy] * tx.wlo[ox] * v;
                        r1[tx.hi[ox]] += ty.whi[oy] * tx.whi[ox] * v;
                    }
                }
            }
        });
}

void BatchNormStats::reset(int channels) {
    mean.assign(static_cast<std::size_t>(channels), 0.0f);
    var.assign(static_cast<std::size_t>(channels), 1.0f);
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, Mode mode, BatchNormOptions opt) {
    require_defined(input, "batchnorm2d", "input");
    require_defined(gamma, "batchnorm2d", "gamma");
    require_defined(beta, "batchnorm2d", "beta");
    const Shape& s = input.shape();
    const auto channels = static_cast<std::size_t>(s.c);
    if (gamma.numel() != channels) throw Error(axis_mismatch("batchnorm2d", "gamma", static_cast<int>(gamma.numel()), s.c));
    if (beta.numel() != channels) throw Error(axis_mismatch("batchnorm2d", "beta", static_cast<int>(beta.numel()), s.c));

    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;
    if (count == 0) throw Error("batchnorm2d: empty input " + s.str());
    std::vector<float> mean(channels), invstd(channels);
    const auto x = input.data();

    if (mode == Mode::Train) {
        if (!stats.initialized()) stats.reset(s.c);
        if (stats.mean.size() != channels) throw Error(axis_mismatch("batchnorm2d", "running-stats", static_cast<int>(stats.mean.size()), s.c));
        for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const float* p = x.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            const double m = acc / static_cast<double>(count);
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const float* p = x.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - m;
                    sq += d * d;
                }
            }
            const double v = sq / static_cast<double>(count);
            mean[c] = static_cast<float>(m);
            invstd[c] = static_cast<float>(1.0 / std::sqrt(v + opt.eps));
            stats.mean[c] = opt.momentum * stats.mean[c] + (1.0f - opt.momentum) * static_cast<float>(m);
            stats.var[c] = opt.momentum * stats.var[c] + (1.0f - opt.momentum) * static_cast<float>(v);
        }
    } else {
        if (!stats.initialized()) throw Error("batchnorm2d: inference mode with uninitialised running statistics");
        if (stats.mean.size() != channels) throw Error(axis_mismatch("batchnorm2d", "running-stats", static_cast<int>(stats.mean.size()), s.c));
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = stats.mean[c];
            invstd[c] = 1.0f / std::sqrt(stats.var[c] + opt.eps);
        }
    }

    std::vector<float> out(s.numel());
    const auto gm = gamma.data();
    const auto bt = beta.data();
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
            const float a = gm[c] * invstd[c];
            const float b = bt[c] - a * mean[c];
            for (std::size_t i = 0; i < plane; ++i) out[off + i] = a * x[off + i] + b;
        }
    }

    auto x_impl = input.impl();
    auto g_impl = gamma.impl();
    auto b_impl = beta.impl();
    const bool batch_stats = mode == Mode::Train;
    return detail::make_result(
        s, std::move(out), OpKind::BatchNorm2d, {&input, &gamma, &beta},
        [x_impl, g_impl, b_impl, mean = std::move(mean), invstd = std::move(invstd), batch_stats](
            const detail::TensorImpl& y) {
            const Shape& s = x_impl->shape;
            const std::size_t channels = static_cast<std::size_t>(s.c);
            const std::size_t plane = s.plane();
            const double count = static_cast<double>(s.n) * static_cast<double>(plane);
            const auto& x = x_impl->data;
            for (std::size_t c = 0; c < channels; ++c) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double dy = y.grad[off + i];
                        sum_dy += dy;
                        sum_dy_xhat += dy * (x[off + i] - mean[c]) * invstd[c];
                    }
                }
                if (g_impl->requires_grad) g_impl->grad_buffer()[c] += static_cast<float>(sum_dy_xhat);
                if (b_impl->requires_grad) b_impl->grad_buffer()[c] += static_cast<float>(sum_dy);
                if (!x_impl->requires_grad) continue;
                auto& dx = x_impl->grad_buffer();
                const float scale = g_impl->data[c] * invstd[c];
                const float mean_dy = static_cast<float>(sum_dy / count);
                const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const float dy = y.grad[off + i];
                        if (batch_stats) {
                            const float xhat = (x[off + i] - mean[c]) * invstd[c];
                            dx[off + i] += scale * (dy - mean_dy - xhat * mean_dy_xhat);
                        } else {
                            dx[off + i] += scale * dy;
                        }
                    }
                }
            }
        });
}

Tensor relu(const Tensor& x) {
    require_defined(x, "relu", "input");
    const auto in = x.data();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
    auto x_impl = x.impl();
    return detail::make_result(x.shape(), std::move(out), OpKind::Relu, {&x},
                               [x_impl](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   for (std::size_t i = 0; i < dx.size(); ++i) {
                                       if (x_impl->data[i] > 0.0f) dx[i] += y.grad[i];
                                   }
                               });
}

Tensor sigmoid(const Tensor& x) {
    require_defined(x, "sigmoid", "input");
    constexpr float lo = std::numeric_limits<float>::min();
    const float hi = std::nextafter(1.0f, 0.0f);
    const auto in = x.data();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const float v = in[i];
        // Split by sign so exp never overflows.
        const float s = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
        out[i] = std::clamp(s, lo, hi);
    }
    auto x_impl = x.impl();
    return detail::make_result(x.shape(), std::move(out), OpKind::Sigmoid, {&x},
                               [x_impl](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   for (std::size_t i = 0; i < dx.size(); ++i) {
                                       const float s = y.data[i];
                                       dx[i] += y.grad[i] * s * (1.0f - s);
                                   }
                               });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const Broadcast kind = classify(a, b, "add");
    const BroadcastIndex bi{kind, a.shape()};
    const auto da = a.data();
    const auto db = b.data();
    std::vector<float> out(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] + db[bi(i)];
    auto a_impl = a.impl();
    auto b_impl = b.impl();
    return detail::make_result(a.shape(), std::move(out), OpKind::Add, {&a, &b},
                               [a_impl, b_impl, bi](const detail::TensorImpl& y) {
                                   if (a_impl->requires_grad) {
                                       auto& ga = a_impl->grad_buffer();
                                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += y.grad[i];
                                   }
                                   if (b_impl->requires_grad) {
                                       auto& gb = b_impl->grad_buffer();
                                       for (std::size_t i = 0; i < y.grad.size(); ++i) gb[bi(i)] += y.grad[i];
                                   }
                               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const Broadcast kind = classify(a, b, "mul");
    const BroadcastIndex bi{kind, a.shape()};
    const auto da = a.data();
    const auto db = b.data();
    std::vector<float> out(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] * db[bi(i)];
    auto a_impl = a.impl();
    auto b_impl = b.impl();
    return detail::make_result(a.shape(), std::move(out), OpKind::Mul, {&a, &b},
                               [a_impl, b_impl, bi](const detail::TensorImpl& y) {
                                   if (a_impl->requires_grad) {
                                       auto& ga = a_impl->grad_buffer();
                                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += y.grad[i] * b_impl->data[bi(i)];
                                   }
                                   if (b_impl->requires_grad) {
                                       auto& gb = b_impl->grad_buffer();
                                       for (std::size_t i = 0; i < y.grad.size(); ++i) gb[bi(i)] += y.grad[i] * a_impl->data[i];
                                   }
                               });
}

Tensor scale(const Tensor& x, float factor) {
    require_defined(x, "scale", "input");
    const auto in = x.data();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
    auto x_impl = x.impl();
    return detail::make_result(x.shape(), std::move(out), OpKind::Scale, {&x},
                               [x_impl, factor](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += y.grad[i] * factor;
                               });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) { return concat_channels(std::vector<Tensor>{a, b}); }

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw Error("concat_channels: no inputs");
    for (const auto& p : parts) require_defined(p, "concat_channels", "input");
    const Shape& first = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != first.n) throw Error(axis_mismatch("concat_channels", "batch", s.n, first.n));
        if (s.h != first.h) throw Error(axis_mismatch("concat_channels", "height", s.h, first.h));
        if (s.w != first.w) throw Error(axis_mismatch("concat_channels", "width", s.w, first.w));
        channels += s.c;
    }
    const Shape out_shape{first.n, channels, first.h, first.w};
    const std::size_t plane = first.plane();
    std::vector<float> out(out_shape.numel());
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (int n = 0; n < first.n; ++n) {
        float* dst = out.data() + static_cast<std::size_t>(n) * channels * plane;
        for (const auto& p : parts) {
            const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
            std::copy_n(p.data().data() + n * len, len, dst);
            dst += len;
        }
    }
    bool track = false;
    for (const auto& p : parts) {
        impls.push_back(p.impl());
        track = track || detail::any_requires_grad({&p});
    }
    Tensor result = Tensor::from_data(out_shape, std::move(out));
    if (!track) return result;
    auto node = std::make_shared<detail::Node>();
    node->kind = OpKind::Concat;
    node->inputs = impls;
    node->backward = [impls, plane, channels](const detail::TensorImpl& y) {
        const int batch = y.shape.n;
        for (int n = 0; n < batch; ++n) {
            const float* src = y.grad.data() + static_cast<std::size_t>(n) * channels * plane;
            for (const auto& p : impls) {
                const std::size_t len = static_cast<std::size_t>(p->shape.c) * plane;
                if (p->requires_grad) {
                    float* dst = p->grad_buffer().data() + n * len;
                    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                }
                src += len;
            }
        }
    };
    result.impl()->grad_fn = std::move(node);
    result.impl()->requires_grad = true;
    return result;
}

Tensor slice_channels(const Tensor& x, int start, int count) {
    require_defined(x, "slice_channels", "input");
    const Shape& s = x.shape();
    if (start < 0 || count < 1 || start + count > s.c) {
        throw Error("slice_channels: channel range [" + std::to_string(start) + ", " +
                    std::to_string(start + count) + ") outside " + s.str());
    }
    const Shape out_shape{s.n, count, s.h, s.w};
    const std::size_t plane = s.plane();
    std::vector<float> out(out_shape.numel());
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(x.data().data() + (static_cast<std::size_t>(n) * s.c + start) * plane,
                    static_cast<std::size_t>(count) * plane,
                    out.data() + static_cast<std::size_t>(n) * count * plane);
    }
    auto x_impl = x.impl();
    return detail::make_result(out_shape, std::move(out), OpKind::Slice, {&x},
                               [x_impl, start, count, plane](const detail::TensorImpl& y) {
                                   const Shape& s = x_impl->shape;
                                   auto& dx = x_impl->grad_buffer();
                                   const std::size_t len = static_cast<std::size_t>(count) * plane;
                                   for (int n = 0; n < s.n; ++n) {
                                       float* dst = dx.data() + (static_cast<std::size_t>(n) * s.c + start) * plane;
                                       const float* src = y.grad.data() + n * len;
                                       for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                                   }
                               });
}

Tensor global_avg_pool(const Tensor& x) {
    require_defined(x, "global_avg_pool", "input");
    const Shape& s = x.shape();
    if (s.h < 1 || s.w < 1) throw Error("global_avg_pool: empty spatial extent " + s.str());
    const std::size_t plane = s.plane();
    std::vector<float> out(static_cast<std::size_t>(s.n) * s.c);
    const auto in = x.data();
    for (std::size_t p = 0; p < out.size(); ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[p * plane + i];
        out[p] = static_cast<float>(acc / static_cast<double>(plane));
    }
    auto x_impl = x.impl();
    return detail::make_result({s.n, s.c, 1, 1}, std::move(out), OpKind::GlobalAvgPool, {&x},
                               [x_impl, plane](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   const float inv = 1.0f / static_cast<float>(plane);
                                   for (std::size_t p = 0; p < y.grad.size(); ++p) {
                                       const float g = y.grad[p] * inv;
                                       for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += g;
                                   }
                               });
}

Tensor broadcast_spatial(const Tensor& x, int height, int width) {
    require_defined(x, "broadcast_spatial", "input");
    const Shape& s = x.shape();
    if (s.h != 1 || s.w != 1) throw Error("broadcast_spatial: expected (N,C,1,1), got " + s.str());
    if (height < 1 || width < 1) throw Error("broadcast_spatial: target extent must be positive");
    const Shape out_shape{s.n, s.c, height, width};
    const std::size_t plane = out_shape.plane();
    std::vector<float> out(out_shape.numel());
    const auto in = x.data();
    for (std::size_t p = 0; p < in.size(); ++p) std::fill_n(out.data() + p * plane, plane, in[p]);
    auto x_impl = x.impl();
    return detail::make_result(out_shape, std::move(out), OpKind::BroadcastSpatial, {&x},
                               [x_impl, plane](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   for (std::size_t p = 0; p < dx.size(); ++p) {
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < plane; ++i) acc += y.grad[p * plane + i];
                                       dx[p] += static_cast<float>(acc);
                                   }
                               });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum", "input");
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    auto x_impl = x.impl();
    return detail::make_result({1, 1, 1, 1}, {static_cast<float>(acc)}, OpKind::Sum, {&x},
                               [x_impl](const detail::TensorImpl& y) {
                                   auto& dx = x_impl->grad_buffer();
                                   for (float& v : dx) v += y.grad[0];
                               });
}

}  // namespace ardu::ops
