#pragma once

#include <array>
#include <compare>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "omniseg/common.hpp"

// Pinhole camera geometry and the point-cloud primitives shared by the
// 2D<->3D transitions: unprojection, projection, depth hole filling,
// voxel mean pooling, k-nearest-neighbor graphs and feature interpolation.
//
// Conventions: camera frame is x right, y down, z forward; integer pixel
// coordinates (u = column, v = row) address pixel centers; poses map camera
// coordinates to world coordinates.
namespace omniseg::geometry {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static CameraPose from_matrix(const Eigen::Matrix4d& m);
  /// Camera at `eye` with its optical axis through `target`; `up` is the world up direction.
  static CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

  Eigen::Matrix4d matrix() const;
  Vec3 to_world(const Vec3& camera_point) const { return rotation * camera_point + translation; }
  Vec3 to_camera(const Vec3& world_point) const {
    return rotation.transpose() * (world_point - translation);
  }
  /// Throws ContractViolation unless R is orthonormal with det +1 within `tolerance`.
  void validate(double tolerance = 1e-6) const;
};

/// Row-major depth image in meters; 0 marks a missing measurement.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int height, int width, double fill = 0.0)
      : height_(height), width_(width), values_(static_cast<size_t>(height) * width, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  double& at(int row, int col) { return values_[static_cast<size_t>(row) * width_ + col]; }
  double at(int row, int col) const { return values_[static_cast<size_t>(row) * width_ + col]; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  void validate() const;
  bool operator==(const DepthMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

struct PixelRef {
  int view = 0;
  int row = 0;
  int col = 0;
  auto operator<=>(const PixelRef&) const = default;
};

struct FeaturizedPointCloud {
  std::vector<Vec3> positions;
  MatrixD features;  // N x F, may have zero columns
  std::vector<PixelRef> provenance;

  int size() const { return static_cast<int>(positions.size()); }
  void validate() const;
};

Vec3 unproject_pixel(const CameraIntrinsics& intrinsics, const CameraPose& pose, double u, double v,
                     double depth);

/// Lifts every pixel with positive depth; provenance is (view, row, col).
FeaturizedPointCloud unproject_depth(const CameraIntrinsics& intrinsics, const CameraPose& pose,
                                     const DepthMap& depth, int view = 0);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool behind_camera = false;
};

std::vector<Projection> project_points(const CameraIntrinsics& intrinsics, const CameraPose& pose,
                                       std::span<const Vec3> points);

/// Nearest-valid fill by 4-neighbor dilation waves; a hole takes its value from
/// the filled neighbor with the smallest (row, col).
DepthMap fill_depth_holes(const DepthMap& depth);

/// output[y, x] = input[y * stride, x * stride]
DepthMap nearest_resize_depth(const DepthMap& depth, int stride);

struct VoxelGrid {
  double voxel_size = 0.0;
  Vec3 origin = Vec3::Zero();
  std::vector<Eigen::Vector3i> voxel_coords;
  std::vector<Vec3> pooled_positions;
  MatrixD pooled_features;
  std::vector<int> point_to_voxel;
  std::vector<std::vector<int>> voxel_to_points;

  int size() const { return static_cast<int>(pooled_positions.size()); }
  int point_count() const { return static_cast<int>(point_to_voxel.size()); }
  /// M x N mean-pooling weights.
  SparseRows pooling_weights() const;
  /// N x M copy-back weights.
  SparseRows copy_weights() const;
};

/// Voxel ids are assigned in order of first appearance along the point order.
VoxelGrid voxelize(std::span<const Vec3> positions, const MatrixD& features, double voxel_size);
VoxelGrid voxelize(const FeaturizedPointCloud& cloud, double voxel_size);

MatrixD devoxelize(const VoxelGrid& grid, const MatrixD& voxel_features);

struct KnnGraph {
  int k = 0;
  std::vector<int> neighbor_index;     // M * k, row-major
  std::vector<Vec3> relative_offset;   // M * k, p_i - p_j

  int size() const { return k == 0 ? 0 : static_cast<int>(neighbor_index.size()) / k; }
  int neighbor(int i, int j) const { return neighbor_index[static_cast<size_t>(i) * k + j]; }
  const Vec3& offset(int i, int j) const { return relative_offset[static_cast<size_t>(i) * k + j]; }
};

/// O(M^2) reference. Neighbors sorted by (squared distance, index).
KnnGraph knn_brute_force(std::span<const Vec3> positions, int k);
/// Uniform-grid accelerated search; returns exactly the reference neighbors.
KnnGraph knn(std::span<const Vec3> positions, int k);

struct BilinearTaps {
  std::array<int, 4> index{};  // flattened row * width + col
  std::array<double, 4> weight{};
  // d(weights)/du and d(weights)/dv, zero where the coordinate is clamped
  std::array<double, 4> dweight_du{};
  std::array<double, 4> dweight_dv{};
};

/// Four-corner bilinear taps with border clamping.
BilinearTaps bilinear_taps(int height, int width, double u, double v);

/// `map` is H*W x F row-major; u is the continuous column, v the row.
Eigen::VectorXd bilinear_sample(const MatrixD& map, int height, int width, double u, double v);

/// Q x N weights realizing trilinear interpolation over the voxel lattice of
/// `source` (cell features are member means located at cell centers). Weights
/// are renormalized over occupied corners; a query with no occupied corner
/// takes its nearest source point.
SparseRows trilinear_weights(std::span<const Vec3> source, double voxel_size,
                             std::span<const Vec3> query);

MatrixD trilinear_interpolate(std::span<const Vec3> source, const MatrixD& source_features,
                              double voxel_size, std::span<const Vec3> query);

/// Index of the nearest source point for each query (ties to lower index).
std::vector<int> nearest_points(std::span<const Vec3> source, std::span<const Vec3> query);

Vec3 componentwise_min(std::span<const Vec3> positions);

}  // namespace omniseg::geometry
