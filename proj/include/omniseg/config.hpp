#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "omniseg/learn.hpp"
#include "omniseg/model.hpp"

// Flat `key = value` run configuration (one entry per line, `#` comments).
namespace omniseg::config {

/// Raised for malformed files, unknown keys and out-of-range values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainMode { Planar, Volumetric, Joint };

struct RunConfig {
  // model
  int image_height = 64;
  int image_width = 64;
  int width = 16;
  int dec_width = 32;
  int queries = 20;
  int rounds = 3;
  int heads = 4;
  int points = 4;
  int deform_layers = 1;
  int k = 8;
  double voxel = 0.04;
  int fusion_layers = 2;
  std::vector<int> fusion_stages{1, 2, 3};
  bool open_vocab = false;
  bool disable_3d_fusion = false;
  bool late_fusion_only = false;
  // training
  TrainMode mode = TrainMode::Volumetric;
  int views = 4;
  int iterations = 2000;
  int batch = 1;
  double lr = 1e-3;
  double lr_decay_start = 0.7;  // fraction of iterations before a linear decay to 0.1x
  double clip = 1.0;
  double loss_class = 2.0;
  double loss_bce = 5.0;
  double loss_dice = 5.0;
  double no_object_weight = 0.1;
  bool augment_2d = true;
  bool augment_3d = true;
  double min_scale = 0.5;
  double max_scale = 1.5;
  double color_jitter = 0.2;
  std::uint64_t seed = 1;
  int log_every = 10;
  int eval_every = 0;
  int checkpoint_every = 0;
  // paths (not part of the hash)
  std::string data;
  std::string out;

  /// Canonical (key, value) pairs in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  /// FNV-1a over the canonical entries excluding paths.
  std::uint64_t hash() const;
  void validate() const;

  model::ModelConfig model(const scenedata::Vocabulary& vocabulary) const;
  learn::LossWeights loss_weights() const;

  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);
  /// Applies one `key=value` assignment; throws ConfigError on unknown keys.
  void set(const std::string& key, const std::string& value);
};

std::string mode_name(TrainMode mode);

}  // namespace omniseg::config
