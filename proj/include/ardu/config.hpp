// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: line-oriented "key = value" text, '#' starts a comment.
// Unknown keys and malformed values are errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ardu/dataio.hpp"
#include "ardu/model.hpp"
#include "ardu/pipeline.hpp"
#include "ardu/trainer.hpp"

namespace ardu {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    AugmentPolicy augment;
    ColorConstancyConfig cc;
    bool color_constancy = true;
    std::size_t samples = 240;  // gen-data size
    SplitSpec split;
    std::uint64_t seed = 0;
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;

    /// Toy preset: eighth-width network on 64x64 synthetic data.
    static RunConfig toy();
    /// Full-width network at 192x256.
    static RunConfig full();

    /// Applies one key; throws naming the key on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Validates every section.
    void validate() const;
    /// Resolved configuration in the same key = value syntax.
    std::string to_text() const;
};

/// Starts from the preset named by an optional "preset = toy|full" line
/// (default toy) and applies the remaining keys in order.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");

}  // namespace ardu
