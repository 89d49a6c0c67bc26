#pragma once

#include <array>
#include <optional>
#include <vector>

#include "omniseg/backbone2d.hpp"
#include "omniseg/decoder.hpp"
#include "omniseg/fusion3d.hpp"
#include "omniseg/scenedata.hpp"

// The complete network: backbone with interleaved 3D fusion, cross-scale
// fusion and the query decoder, plus the batch preparation they share.
namespace omniseg::model {

using autodiff::MapShape;

struct ModelConfig {
  int image_height = 64;
  int image_width = 64;
  backbone2d::BackboneConfig backbone;
  fusion3d::FusionConfig fusion;
  decoder::DecoderConfig decoder;
  /// Backbone stages (0..3) followed by a 3D fusion stage.
  std::vector<int> fusion_stages{1, 2, 3};
  bool disable_3d_fusion = false;
  bool late_fusion_only = false;

  void validate() const;
};

void register_params(autodiff::ParamStore<float>& store, const ModelConfig& config, std::uint64_t seed);

/// One forward pass worth of input: V views of RGB, optionally with geometry.
struct Batch {
  MapShape input;
  MatrixD rgb;  // (V*H*W) x 3, normalized
  std::optional<fusion3d::ViewGeometry> geometry;
  /// Per view, stride-4 GT instance ids (kIgnoreLabel for unlabeled tokens).
  std::vector<int> token_instances;
};

/// Builds a batch from frames of a scene. `augment_3d` perturbs the lifted positions.
Batch make_batch(const std::vector<const scenedata::Frame*>& frames, bool with_geometry,
                 std::optional<scenedata::Augment3DParams> augment_3d = std::nullopt);

/// Geometry shared by every stage of one forward pass.
struct Prepared {
  const Batch* batch = nullptr;
  bool volumetric = false;
  std::optional<std::array<fusion3d::Token3DSet, 4>> tokens;
};

/// Volumetric when geometry is present and 3D fusion is enabled; token sets are
/// also built for planar batches with geometry when `need_tokens` is set.
Prepared prepare(const Batch& batch, const ModelConfig& config, bool need_tokens = false);

template <typename T>
decoder::DecoderOutput forward(nn::Binder<T>& bind, const ModelConfig& config, const Prepared& prepared,
                               const std::vector<Vec3>* mesh = nullptr);

}  // namespace omniseg::model
