#pragma once

#include <filesystem>

#include "omniseg/config.hpp"

// Single-file checkpoint: an ASCII header (format version, config hash,
// ablation switches, the embedded config and a manifest of parameter blocks)
// followed by a blob of little-endian 32-bit floats.
namespace omniseg::checkpoint {

inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  config::RunConfig config;
  autodiff::ParamStore<float> params;
  long iteration = 0;
};

void save(const std::filesystem::path& path, const config::RunConfig& config,
          const autodiff::ParamStore<float>& params, long iteration = 0);

/// Throws LoadError naming the file on malformed content. When `expected` is
/// given, its hash must equal the stored config hash.
Checkpoint load(const std::filesystem::path& path, const config::RunConfig* expected = nullptr);

}  // namespace omniseg::checkpoint
