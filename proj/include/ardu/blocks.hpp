// SPDX-License-Identifier: Apache-2.0
//
// Composite layers of the segmentation network: residual conv block with
// squeeze-excite, additive attention gate, ASPP, VGG-19-style encoder and the
// decoder block. Layers hold handles to tensors owned by a ParameterStore.

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ardu/ops.hpp"
#include "ardu/tensor.hpp"

namespace ardu {

using ops::Mode;

enum class Init { HeUniform, Zeros, Ones };

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct NamedStats {
    std::string name;
    std::shared_ptr<ops::BatchNormStats> stats;
};

/// Ordered registry of trainable tensors and batch-norm running statistics.
/// Each tensor's initial values depend only on (seed, name), so two networks
/// built from the same seed agree on every parameter they share.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor create(const std::string& name, Shape shape, Init init, int fan_in = 0);
    std::shared_ptr<ops::BatchNormStats> create_stats(const std::string& name, int channels);

    const std::vector<NamedTensor>& parameters() const { return params_; }
    const std::vector<NamedStats>& stats() const { return stats_; }
    std::size_t scalar_count() const;

    /// Throws Error naming `name` when absent.
    Tensor find(const std::string& name) const;
    std::shared_ptr<ops::BatchNormStats> find_stats(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.contains(name); }

private:
    std::uint64_t seed_;
    std::vector<NamedTensor> params_;
    std::vector<NamedStats> stats_;
    std::unordered_map<std::string, std::size_t> index_;
    std::unordered_map<std::string, std::size_t> stats_index_;
};

struct Conv2d {
    Tensor weight;  // (out, in, k, k)
    Tensor bias;    // (1, out, 1, 1)
    ops::Conv2dOptions options;

    static Conv2d create(ParameterStore& store, const std::string& name, int in, int out, int kernel,
                         ops::Conv2dOptions options = {});
    Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, options); }
    int in_channels() const { return weight.shape().c; }
    int out_channels() const { return weight.shape().n; }
};

struct BatchNorm2d {
    Tensor gamma;
    Tensor beta;
    std::shared_ptr<ops::BatchNormStats> stats;
    ops::BatchNormOptions options;

    static BatchNorm2d create(ParameterStore& store, const std::string& name, int channels,
                              ops::BatchNormOptions options = {});
    Tensor operator()(const Tensor& x, Mode mode) const {
        return ops::batchnorm2d(x, gamma, beta, *stats, mode, options);
    }
};

struct ConvBlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    int se_ratio = 8;

    void validate() const;
};

struct AttentionGateSpec {
    int gate_channels = 0;   // decoder signal
    int skip_channels = 0;   // encoder signal
    int inter_channels = 0;  // defaults to max(1, skip_channels / 2) when 0

    int resolved_inter() const { return inter_channels > 0 ? inter_channels : std::max(1, skip_channels / 2); }
    void validate() const;
};

struct AsppSpec {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<int> rates{1, 6, 12, 18};

    void validate() const;
};

/// Channel attention: x * sigmoid(W2 relu(W1 gap(x))).
struct SqueezeExcite {
    Conv2d reduce;
    Conv2d expand;

    static SqueezeExcite create(ParameterStore& store, const std::string& name, int channels, int ratio);
    Tensor operator()(const Tensor& x) const;
};

/// Conv3x3-BN-ReLU-Conv3x3-BN main path plus Conv1x1-BN shortcut, merged by
/// addition and ReLU, then squeeze-excite. With `residual == false` the
/// shortcut is absent and the main path ends in ReLU (plain double-conv block).
struct ConvBlock {
    ConvBlockSpec spec;
    bool residual = true;
    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
    Conv2d shortcut;
    BatchNorm2d shortcut_bn;
    SqueezeExcite se;

    static ConvBlock create(ParameterStore& store, const std::string& name, const ConvBlockSpec& spec,
                            bool residual, ops::BatchNormOptions bn = {});
    Tensor forward(const Tensor& x, Mode mode) const;
    /// Output before the squeeze-excite stage.
    Tensor forward_merged(const Tensor& x, Mode mode) const;
};

struct AttentionOutput {
    Tensor gated;  // skip * alpha, same shape as the skip tensor
    Tensor alpha;  // (N,1,H,W) coefficients at the skip's extent
};

/// Additive attention gate. The gating signal may sit at half the skip's
/// extent (the skip path then uses a stride-2 projection and alpha is
/// upsampled back) or at the same extent.
struct AttentionGate {
    AttentionGateSpec spec;
    Conv2d theta_x;  // skip projection, no bias
    Conv2d phi_g;    // gate projection
    Conv2d psi;      // to one channel

    static AttentionGate create(ParameterStore& store, const std::string& name, const AttentionGateSpec& spec);
    AttentionOutput forward(const Tensor& skip, const Tensor& gate) const;
};

struct Aspp {
    AsppSpec spec;
    std::vector<Conv2d> branches;  // rate 1 -> 1x1, rate r > 1 -> 3x3 dilated r
    std::vector<BatchNorm2d> branch_bn;
    Conv2d pool_conv;
    BatchNorm2d pool_bn;
    Conv2d fuse;
    BatchNorm2d fuse_bn;

    static Aspp create(ParameterStore& store, const std::string& name, const AsppSpec& spec,
                       ops::BatchNormOptions bn = {});
    Tensor forward(const Tensor& x, Mode mode) const;
};

struct EncoderOutput {
    Tensor bottleneck;
    std::array<Tensor, 4> skips;  // shallow to deep
};

/// VGG-19 convolutional topology: stages of 2,2,4,4,4 3x3 conv+ReLU layers
/// separated by 2x2 max-pooling.
struct VggEncoder {
    static constexpr std::array<int, 5> kStageDepth{2, 2, 4, 4, 4};
    static constexpr std::array<int, 5> kBaseWidths{64, 128, 256, 512, 512};

    std::array<int, 5> widths{};
    std::vector<std::vector<Conv2d>> stages;

    static std::array<int, 5> scaled_widths(double width_mult);
    static VggEncoder create(ParameterStore& store, const std::string& name, int in_channels, double width_mult);
    EncoderOutput forward(const Tensor& x) const;
    std::size_t conv_count() const;
};

/// Upsample by two, concatenate the skip tensors, apply a ConvBlock.
struct DecoderBlock {
    ConvBlock block;

    static DecoderBlock create(ParameterStore& store, const std::string& name, const ConvBlockSpec& spec,
                               bool residual, ops::BatchNormOptions bn = {});
    Tensor forward(const Tensor& x, const std::vector<Tensor>& skips, Mode mode) const;
};

}  // namespace ardu
