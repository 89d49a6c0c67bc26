#include "omniseg/model.hpp"

#include <algorithm>

namespace omniseg::model {

using autodiff::Var;

void ModelConfig::validate() const {
  require(image_height > 0 && image_width > 0 && image_height % 32 == 0 && image_width % 32 == 0,
          "model: image size must be a positive multiple of 32");
  require(backbone.width >= 1, "model: backbone width must be positive");
  require(fusion.k >= 1 && fusion.layers >= 0 && fusion.heads >= 1 && fusion.voxel_size_at_4 > 0.0,
          "model: invalid fusion settings");
  require(decoder.queries >= 1 && decoder.rounds >= 0 && decoder.points >= 1 && decoder.classes >= 1,
          "model: invalid decoder settings");
  for (int s : fusion_stages) require(s >= 0 && s <= 3, "model: fusion stage index out of range");
  for (int s = 0; s < 4; ++s) {
    require(backbone.channels(s) % fusion.heads == 0, "model: backbone widths must be divisible by fusion heads");
  }
}

void register_params(autodiff::ParamStore<float>& store, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Initializer init(store, seed);
  backbone2d::register_params(init, config.backbone);
  for (int s : config.fusion_stages) {
    fusion3d::register_params(init, "bb.f3d" + std::to_string(s), config.backbone.channels(s), config.fusion);
  }
  std::array<int, 4> channels{};
  for (int s = 0; s < 4; ++s) channels[s] = config.backbone.channels(s);
  decoder::register_params(init, config.decoder, channels, config.fusion);
}

Batch make_batch(const std::vector<const scenedata::Frame*>& frames, bool with_geometry,
                 std::optional<scenedata::Augment3DParams> augment_3d) {
  require(!frames.empty(), "make_batch: no frames");
  const int h = frames[0]->height();
  const int w = frames[0]->width();
  Batch b;
  b.input = MapShape{static_cast<int>(frames.size()), h, w};
  std::vector<const std::vector<std::uint8_t>*> rgb;
  for (const auto* f : frames) {
    require(f->height() == h && f->width() == w, "make_batch: frames differ in size");
    rgb.push_back(&f->rgb.data);
  }
  b.rgb = backbone2d::normalize_rgb(rgb, h, w);
  const int th = h / 4;
  const int tw = w / 4;
  b.token_instances.reserve(frames.size() * th * tw);
  for (const auto* f : frames) {
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) b.token_instances.push_back(f->instance_at(y * 4, x * 4));
    }
  }
  if (with_geometry) {
    fusion3d::ViewGeometry geo;
    for (const auto* f : frames) {
      geo.intrinsics.push_back(f->intrinsics);
      geo.poses.push_back(f->pose);
      geo.depth.push_back(geometry::fill_depth_holes(f->depth));
    }
    geo.augment = augment_3d;
    b.geometry = std::move(geo);
  }
  return b;
}

Prepared prepare(const Batch& batch, const ModelConfig& config, bool need_tokens) {
  require(batch.input.height == config.image_height && batch.input.width == config.image_width,
          "model: batch image size differs from the configured size");
  Prepared p;
  p.batch = &batch;
  p.volumetric = batch.geometry.has_value() && !config.disable_3d_fusion;
  if (batch.geometry && (p.volumetric || need_tokens)) {
    std::array<fusion3d::Token3DSet, 4> sets;
    for (int s = 0; s < 4; ++s) {
      const int stride = backbone2d::kStrides[s];
      const MapShape shape{batch.input.views, batch.input.height / stride, batch.input.width / stride};
      sets[s] = fusion3d::lift_geometry(*batch.geometry, shape, stride, config.fusion.voxel_size(stride),
                                        config.fusion.k);
    }
    p.tokens = std::move(sets);
  }
  return p;
}

template <typename T>
decoder::DecoderOutput forward(nn::Binder<T>& bind, const ModelConfig& config, const Prepared& prepared,
                               const std::vector<Vec3>* mesh) {
  auto& g = bind.graph();
  const Batch& batch = *prepared.batch;
  const Var rgb = g.constant(batch.rgb.cast<T>());
  const bool fuse = prepared.volumetric;
  const auto is_fusion_stage = [&](int s) {
    return std::find(config.fusion_stages.begin(), config.fusion_stages.end(), s) != config.fusion_stages.end();
  };
  const auto stage_fusion = [&](int s, Var map) {
    return fusion3d::fusion_stage(bind, "bb.f3d" + std::to_string(s), map, (*prepared.tokens)[s], config.fusion);
  };

  backbone2d::FeaturePyramid pyramid;
  if (fuse && !config.late_fusion_only) {
    pyramid = backbone2d::forward(bind, config.backbone, rgb, batch.input,
                                  [&](int s, Var map, const MapShape&) { return is_fusion_stage(s) ? stage_fusion(s, map) : map; });
  } else {
    pyramid = backbone2d::forward(bind, config.backbone, rgb, batch.input);
    if (fuse) {
      for (int s = 0; s < 4; ++s) {
        if (is_fusion_stage(s)) pyramid.maps[s] = stage_fusion(s, pyramid.maps[s]);
      }
    }
  }

  decoder::DecoderInputs in;
  in.volumetric = fuse;
  in.pyramid = &pyramid;
  in.tokens = prepared.tokens ? &*prepared.tokens : nullptr;
  in.mesh = mesh;
  return decoder::forward(bind, config.decoder, config.fusion, in);
}

template decoder::DecoderOutput forward(nn::Binder<float>&, const ModelConfig&, const Prepared&,
                                        const std::vector<Vec3>*);
template decoder::DecoderOutput forward(nn::Binder<double>&, const ModelConfig&, const Prepared&,
                                        const std::vector<Vec3>*);

}  // namespace omniseg::model
