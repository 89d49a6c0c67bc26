#pragma once

#include <array>
#include <functional>

#include "omniseg/nn.hpp"

// Small residual convolutional feature extractor producing maps at strides
// 4, 8, 16 and 32. A hook may rewrite the per-view maps after selected stages;
// that is where cross-view 3D fusion is interleaved for RGB-D input.
namespace omniseg::backbone2d {

using autodiff::MapShape;
using autodiff::Var;

inline constexpr std::array<int, 4> kStrides{4, 8, 16, 32};

struct BackboneConfig {
  int width = 16;  // channels at stride 4; doubled per stage
  int channels(int stage) const { return width << stage; }
};

void register_params(nn::Initializer& init, const BackboneConfig& config);

struct FeaturePyramid {
  std::array<Var, 4> maps;
  std::array<MapShape, 4> shapes;
  std::array<int, 4> channels{};
};

/// Called with the stage index (0..3), its output map and shape; returns the replacement map.
using StageHook = std::function<Var(int stage, Var map, const MapShape& shape)>;

/// `rgb` is (V*H*W) x 3. H and W must be multiples of 32.
template <typename T>
FeaturePyramid forward(nn::Binder<T>& bind, const BackboneConfig& config, Var rgb, const MapShape& input,
                       const StageHook& hook = nullptr);

/// Converts 8-bit RGB views to the network input: channels centered at 0.5 and scaled by 4.
MatrixD normalize_rgb(const std::vector<const std::vector<std::uint8_t>*>& views, int height, int width);

}  // namespace omniseg::backbone2d
