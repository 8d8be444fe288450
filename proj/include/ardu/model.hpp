// SPDX-License-Identifier: Apache-2.0
//
// The attention-gated residual double U-Net:
//
//   image -> VGG encoder 1 -> ASPP -> decoder 1 (gated skips) -> out1
//   image * out1 -> residual encoder 2 -> ASPP -> decoder 2 -> out2
//   final = sigmoid(conv1x1(concat(out1, out2)))
//
// Decoder 2 receives both encoders' skips; encoder-2 skips pass through
// attention gates only in the full-attention variant.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ardu/blocks.hpp"

namespace ardu {

enum class Variant { HalfAttention, FullAttention };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
    Variant variant = Variant::FullAttention;
    double width_mult = 1.0;
    std::array<int, 4> encoder2_widths{64, 128, 256, 512};
    std::array<int, 4> decoder_widths{256, 128, 64, 32};  // deepest block first
    int aspp_out = 64;
    std::vector<int> aspp_rates{1, 6, 12, 18};
    int se_ratio = 8;
    int height = 192;
    int width = 256;
    bool residual = true;
    ops::BatchNormOptions batchnorm{};

    /// Full-width network at 192x256.
    static ModelConfig full_size();
    /// Eighth-width network at 64x64 with ASPP rates {1,2,3}.
    static ModelConfig toy();

    /// Throws Error listing every violated constraint.
    void validate() const;
};

struct ForwardOutput {
    Tensor out1;
    Tensor out2;
    Tensor final;
    std::vector<Tensor> attention;  // alpha maps, decoder-1 gates first
};

class Model {
public:
    /// Deterministic in (config, seed).
    static Model build(const ModelConfig& config, std::uint64_t seed);

    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    ForwardOutput forward(const Tensor& image, Mode mode) const;
    /// First U-Net only (out1); never touches decoder 2's parameters.
    Tensor forward_first(const Tensor& image, Mode mode) const;

    const ModelConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    /// Independent copy with identical parameter values and running statistics.
    Model clone() const;
    /// Copies values and statistics from a model with the same configuration.
    void assign_from(const Model& other);

    // Components, exposed for inspection and tests.
    VggEncoder encoder1;
    Aspp aspp1;
    std::vector<AttentionGate> gates1;
    std::vector<DecoderBlock> decoder1;
    Conv2d head1;
    std::vector<ConvBlock> encoder2;
    Aspp aspp2;
    std::vector<AttentionGate> gates2;  // empty for half attention
    std::vector<DecoderBlock> decoder2;
    Conv2d head2;
    Conv2d final_head;

private:
    Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed), store_(seed) {}

    struct FirstPass {
        EncoderOutput enc;
        Tensor out1;
    };
    FirstPass first_pass(const Tensor& image, Mode mode, std::vector<Tensor>* attention) const;

    ModelConfig config_;
    std::uint64_t seed_;
    ParameterStore store_;
};

struct ModelCost {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;  // per image at the configured extent
};

/// Analytic count. Convolutions contribute 2 * MACs plus one add per output for
/// the bias; batch norm 2 per element; ReLU, sigmoid, add and mul 1 per element;
/// max-pooling 3 comparisons per output; bilinear upsampling 7 per output;
/// global pooling 1 per input element.
ModelCost count_params_flops(const ModelConfig& config);

/// Binary checkpoint: "ARDU1", u32 record count, then per record u32 name
/// length, name bytes, four u32 extents and little-endian float32 values.
/// Batch-norm running statistics follow the parameters under the reserved
/// names "bn_stats/<layer>/mean" and "bn_stats/<layer>/var".
void save_checkpoint(const Model& model, const std::filesystem::path& path);
void load_checkpoint_into(Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace ardu
