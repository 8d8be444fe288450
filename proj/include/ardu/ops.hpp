// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every function records a backward rule when an
// input tracks gradients and recording is enabled.

#pragma once

#include <vector>

#include "ardu/tensor.hpp"

namespace ardu::ops {

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

/// Zero-padded cross-correlation. `kernel` is (Cout, Cin, Kh, Kw); `bias` may be
/// undefined or hold Cout values in any (…) layout with numel == Cout.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Conv2dOptions options = {});

Tensor maxpool2d(const Tensor& input, int window = 2, int stride = 2);

/// 2x bilinear upsampling, half-pixel centres, edge samples clamped.
Tensor upsample_bilinear2x(const Tensor& input);

enum class Mode { Train, Infer };

/// Per-channel running statistics owned by a batch-norm layer. Empty vectors
/// mean "never initialised".
struct BatchNormStats {
    std::vector<float> mean;
    std::vector<float> var;
    bool initialized() const { return !mean.empty(); }
    void reset(int channels);
};

struct BatchNormOptions {
    float eps = 1e-5f;
    float momentum = 0.9f;
};

/// Train mode normalises with batch statistics over (N,H,W) and folds them into
/// `stats` (running = momentum * running + (1 - momentum) * batch, biased
/// variance). Infer mode uses `stats` and throws if they were never set.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, Mode mode, BatchNormOptions options = {});

Tensor relu(const Tensor& x);
/// Output clamped to the open interval (0, 1) representable in float.
Tensor sigmoid(const Tensor& x);

/// Binary ops accept `b` either with the same shape as `a`, as a single-channel
/// map (N,1,H,W) broadcast over channels, or as per-channel values (N,C,1,1)
/// broadcast over space.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int start, int count);

Tensor global_avg_pool(const Tensor& x);
/// (N,C,1,1) -> (N,C,H,W) by replication.
Tensor broadcast_spatial(const Tensor& x, int height, int width);

/// Sum of all elements as a (1,1,1,1) tensor.
Tensor sum(const Tensor& x);

}  // namespace ardu::ops
