#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "omniseg/geometry.hpp"
#include "omniseg/nn.hpp"
#include "omniseg/scenedata.hpp"

// Cross-view 3D fusion: per-view feature maps are lifted to 3D with depth,
// mean-pooled into voxels, refined by k-NN attention with relative position
// embeddings and written back to the pixels they came from.
namespace omniseg::fusion3d {

using autodiff::MapShape;
using autodiff::Var;

/// Camera data for the views of one batch, at full image resolution.
struct ViewGeometry {
  std::vector<geometry::CameraIntrinsics> intrinsics;
  std::vector<geometry::CameraPose> poses;
  std::vector<geometry::DepthMap> depth;  // hole-filled
  /// Similarity transform plus jitter applied to every lifted position.
  std::optional<scenedata::Augment3DParams> augment;

  int views() const { return static_cast<int>(poses.size()); }
  void validate() const;
};

struct FusionConfig {
  int heads = 4;
  int layers = 2;
  int k = 8;
  double voxel_size_at_4 = 0.04;  // meters at stride 4, scaled linearly with stride

  double voxel_size(int stride) const { return voxel_size_at_4 * stride / 4.0; }
};

/// Feature-independent part of a lift: which pixels become points, where, and
/// how they pool into voxel tokens.
struct Token3DSet {
  MapShape shape;
  int stride = 1;
  double voxel_size = 0.0;
  std::vector<int> point_rows;           // map row of each lifted point
  std::vector<Vec3> point_positions;     // world position of each lifted point
  std::vector<char> pixel_valid;         // per map row: lifted or not
  std::vector<Vec3> pixel_positions;     // per map row (zero where not lifted)
  geometry::VoxelGrid grid;              // over the lifted points
  geometry::KnnGraph knn;                // over the voxel tokens
  std::shared_ptr<const SparseRows> pool;       // M x map rows
  std::shared_ptr<const SparseRows> to_pixels;  // map rows x M (empty rows where not lifted)
  std::shared_ptr<const SparseRows> neighbors;  // (M*k) x M one-hot gather
  MatrixD scaled_offsets;                       // (M*k) x 3, (p_i - p_j) / voxel_size

  int tokens() const { return grid.size(); }
};

/// Lifts the pixels of a map of `shape` (stride `stride` relative to the depth
/// maps) and builds voxel tokens. Throws ContractViolation if no pixel has depth.
Token3DSet lift_geometry(const ViewGeometry& geometry, const MapShape& shape, int stride, double voxel_size,
                         int k);

void register_params(nn::Initializer& init, const std::string& prefix, int width, const FusionConfig& config);

/// Mean-pooled voxel token features (M x D).
template <typename T>
Var lift_features(autodiff::Graph<T>& g, Var maps, const Token3DSet& tokens);

/// k-NN attention layers over voxel tokens with relative position embeddings.
template <typename T>
Var relpos_attention(nn::Binder<T>& bind, const std::string& prefix, Var tokens_in, const Token3DSet& tokens,
                     const FusionConfig& config);

/// Copies every voxel feature to its member pixels; other pixels keep `maps`.
template <typename T>
Var project_to_2d(autodiff::Graph<T>& g, Var maps, Var voxel_features, const Token3DSet& tokens);

/// Lift, attend, project. The attention update is added to each member pixel,
/// so with zeroed residual branches the stage is an exact identity.
template <typename T>
Var fusion_stage(nn::Binder<T>& bind, const std::string& prefix, Var maps, const Token3DSet& tokens,
                 const FusionConfig& config);

}  // namespace omniseg::fusion3d
