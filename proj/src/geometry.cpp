#include "omniseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <unordered_map>

#include <Eigen/Dense>

namespace omniseg::geometry {

void CameraIntrinsics::validate() const {
  require(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
  require(width >= 1 && height >= 1, "intrinsics: image size must be at least 1x1");
  require(std::isfinite(cx) && std::isfinite(cy), "intrinsics: principal point must be finite");
}

CameraPose CameraPose::from_matrix(const Eigen::Matrix4d& m) {
  CameraPose pose;
  pose.rotation = m.topLeftCorner<3, 3>();
  pose.translation = m.topRightCorner<3, 1>();
  return pose;
}

CameraPose CameraPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  // camera y points down in the image, so it is opposite to world up
  Vec3 right = forward.cross(up);
  require(right.norm() > 1e-12, "look_at: view direction parallel to up vector");
  right.normalize();
  const Vec3 down = forward.cross(right);
  CameraPose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = eye;
  return pose;
}

Eigen::Matrix4d CameraPose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

void CameraPose::validate(double tolerance) const {
  require(rotation.allFinite() && translation.allFinite(), "pose: non-finite entries");
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  require(ortho <= tolerance, "pose: rotation is not orthonormal (max |R^T R - I| = " +
                                  std::to_string(ortho) + ")");
  require(std::abs(rotation.determinant() - 1.0) <= tolerance, "pose: rotation determinant is not +1");
}

void DepthMap::validate() const {
  require(values_.size() == static_cast<size_t>(height_) * width_, "depth: size mismatch");
  for (double d : values_) {
    require(std::isfinite(d) && d >= 0.0, "depth: entries must be finite and non-negative");
  }
}

void FeaturizedPointCloud::validate() const {
  require(features.rows() == 0 || features.rows() == size(),
          "point cloud: features and positions differ in length");
  require(provenance.empty() || static_cast<int>(provenance.size()) == size(),
          "point cloud: provenance length mismatch");
  for (const Vec3& p : positions) require(p.allFinite(), "point cloud: non-finite position");
  std::set<PixelRef> seen(provenance.begin(), provenance.end());
  require(seen.size() == provenance.size(), "point cloud: duplicate provenance");
}

Vec3 unproject_pixel(const CameraIntrinsics& intr, const CameraPose& pose, double u, double v,
                     double depth) {
  const Vec3 cam((u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth);
  return pose.to_world(cam);
}

FeaturizedPointCloud unproject_depth(const CameraIntrinsics& intr, const CameraPose& pose,
                                     const DepthMap& depth, int view) {
  require(depth.width() == intr.width && depth.height() == intr.height,
          "unproject_depth: depth is " + std::to_string(depth.height()) + "x" +
              std::to_string(depth.width()) + " but intrinsics are " + std::to_string(intr.height) +
              "x" + std::to_string(intr.width));
  FeaturizedPointCloud cloud;
  for (int row = 0; row < depth.height(); ++row) {
    for (int col = 0; col < depth.width(); ++col) {
      const double d = depth.at(row, col);
      if (d <= 0.0) continue;
      cloud.positions.push_back(unproject_pixel(intr, pose, col, row, d));
      cloud.provenance.push_back({view, row, col});
    }
  }
  return cloud;
}

std::vector<Projection> project_points(const CameraIntrinsics& intr, const CameraPose& pose,
                                       std::span<const Vec3> points) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const Vec3& p : points) {
    const Vec3 cam = pose.to_camera(p);
    Projection proj;
    proj.depth = cam.z();
    proj.behind_camera = cam.z() <= 1e-9;
    if (!proj.behind_camera) {
      proj.u = intr.fx * cam.x() / cam.z() + intr.cx;
      proj.v = intr.fy * cam.y() / cam.z() + intr.cy;
    }
    out.push_back(proj);
  }
  return out;
}

DepthMap fill_depth_holes(const DepthMap& depth) {
  DepthMap out = depth;
  const int h = depth.height();
  const int w = depth.width();
  bool any_valid = false;
  for (double d : depth.values()) any_valid = any_valid || d > 0.0;
  if (!any_valid) return out;

  // neighbor order is the (row, col) tie-break: up, left, right, down
  constexpr int kDr[4] = {-1, 0, 0, 1};
  constexpr int kDc[4] = {0, -1, 1, 0};
  bool changed = true;
  while (changed) {
    changed = false;
    const DepthMap snapshot = out;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (snapshot.at(r, c) > 0.0) continue;
        for (int n = 0; n < 4; ++n) {
          const int rr = r + kDr[n];
          const int cc = c + kDc[n];
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (snapshot.at(rr, cc) > 0.0) {
            out.at(r, c) = snapshot.at(rr, cc);
            changed = true;
            break;
          }
        }
      }
    }
  }
  return out;
}

DepthMap nearest_resize_depth(const DepthMap& depth, int stride) {
  require(stride >= 1, "nearest_resize_depth: stride must be positive");
  require(depth.height() % stride == 0 && depth.width() % stride == 0,
          "nearest_resize_depth: stride " + std::to_string(stride) + " does not divide " +
              std::to_string(depth.height()) + "x" + std::to_string(depth.width()));
  DepthMap out(depth.height() / stride, depth.width() / stride);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) out.at(y, x) = depth.at(y * stride, x * stride);
  }
  return out;
}

Vec3 componentwise_min(std::span<const Vec3> positions) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const Vec3& p : positions) lo = lo.cwiseMin(p);
  return lo;
}

namespace {

struct CellHash {
  size_t operator()(const Eigen::Vector3i& c) const {
    std::uint64_t h = static_cast<std::uint32_t>(c.x());
    h = h * 0x9E3779B1u ^ static_cast<std::uint32_t>(c.y());
    h = h * 0x9E3779B1u ^ static_cast<std::uint32_t>(c.z());
    return static_cast<size_t>(mix_seed(h, 7));
  }
};

struct CellEq {
  bool operator()(const Eigen::Vector3i& a, const Eigen::Vector3i& b) const { return a == b; }
};

// Surfaces that lie exactly on a cell boundary (axis-aligned walls at a
// multiple of the cell size) would otherwise land on either side depending on
// rounding; nudging up by far more than the rounding noise keeps them together.
constexpr double kBoundarySnap = 1e-9;

Eigen::Vector3i cell_of(const Vec3& p, const Vec3& origin, double size) {
  return Eigen::Vector3i(static_cast<int>(std::floor((p.x() - origin.x()) / size + kBoundarySnap)),
                         static_cast<int>(std::floor((p.y() - origin.y()) / size + kBoundarySnap)),
                         static_cast<int>(std::floor((p.z() - origin.z()) / size + kBoundarySnap)));
}

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Squared distances that agree to within 1e-12 are the same distance: equal
// spacing in the data otherwise turns into an arbitrary, rounding-dependent
// neighbor order once the cloud is moved.
double rank_distance(const Vec3& a, const Vec3& b) { return std::round(squared_distance(a, b) * 1e12) * 1e-12; }

struct Candidate {
  double d2;
  int index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

// Uniform grid over a point set, used for k-NN and nearest-point lookups.
class SpatialGrid {
 public:
  SpatialGrid(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
    origin_ = componentwise_min(points);
    Vec3 hi = -Vec3::Constant(std::numeric_limits<double>::infinity());
    for (const Vec3& p : points) hi = hi.cwiseMax(p);
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
      cells_[cell_of(points[i], origin_, cell_)].push_back(i);
    }
    const Eigen::Vector3i extent = cell_of(hi, origin_, cell_);
    max_ring_ = extent.maxCoeff() + 2;
  }

  // k best candidates for `query`, sorted by (d2, index).
  std::vector<Candidate> nearest(const Vec3& query, int k) const {
    std::vector<Candidate> best;
    const Eigen::Vector3i center = cell_of(query, origin_, cell_);
    const int reach = max_ring_ + std::max({std::abs(center.x()), std::abs(center.y()),
                                            std::abs(center.z())});
    for (int r = 0; r <= reach; ++r) {
      for (int dx = -r; dx <= r; ++dx) {
        for (int dy = -r; dy <= r; ++dy) {
          for (int dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const auto it = cells_.find(center + Eigen::Vector3i(dx, dy, dz));
            if (it == cells_.end()) continue;
            for (int idx : it->second) {
              best.push_back({rank_distance(query, points_[idx]), idx});
            }
          }
        }
      }
      std::sort(best.begin(), best.end());
      if (static_cast<int>(best.size()) > k) best.resize(k);
      if (static_cast<int>(best.size()) == k) {
        // anything outside the searched cube is at least r * cell away
        const double bound = r * cell_;
        if (best.back().d2 + 1e-12 < bound * bound * (1.0 - 1e-9)) break;
      }
    }
    return best;
  }

 private:
  std::span<const Vec3> points_;
  double cell_;
  Vec3 origin_;
  int max_ring_ = 0;
  std::unordered_map<Eigen::Vector3i, std::vector<int>, CellHash, CellEq> cells_;
};

double grid_cell_size(std::span<const Vec3> points, int per_cell) {
  Vec3 lo = componentwise_min(points);
  Vec3 hi = -Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const Vec3& p : points) hi = hi.cwiseMax(p);
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) return 1.0;
  const double cells_per_axis =
      std::max(1.0, std::round(std::cbrt(static_cast<double>(points.size()) / std::max(1, per_cell))));
  return extent / cells_per_axis;
}

KnnGraph assemble_graph(std::span<const Vec3> positions, int k,
                        const std::vector<std::vector<Candidate>>& rows) {
  KnnGraph g;
  g.k = k;
  g.neighbor_index.reserve(positions.size() * k);
  g.relative_offset.reserve(positions.size() * k);
  for (size_t i = 0; i < positions.size(); ++i) {
    const auto& row = rows[i];
    for (int j = 0; j < k; ++j) {
      const int idx = row[std::min<size_t>(j, row.size() - 1)].index;
      g.neighbor_index.push_back(idx);
      g.relative_offset.push_back(positions[i] - positions[idx]);
    }
  }
  return g;
}

// Self first, then the rest by (d2, index). Self has d2 = 0 and would sort
// first anyway unless a coincident point has a lower index.
std::vector<Candidate> self_first(int self, std::vector<Candidate> cands, int k) {
  std::vector<Candidate> row{{0.0, self}};
  for (const Candidate& c : cands) {
    if (c.index == self) continue;
    row.push_back(c);
    if (static_cast<int>(row.size()) == k) break;
  }
  return row;
}

}  // namespace

KnnGraph knn_brute_force(std::span<const Vec3> positions, int k) {
  require(!positions.empty(), "knn: empty point set");
  require(k >= 1, "knn: k must be at least 1");
  const int m = static_cast<int>(positions.size());
  std::vector<std::vector<Candidate>> rows(m);
  for (int i = 0; i < m; ++i) {
    std::vector<Candidate> all;
    all.reserve(m);
    for (int j = 0; j < m; ++j) all.push_back({rank_distance(positions[i], positions[j]), j});
    std::sort(all.begin(), all.end());
    rows[i] = self_first(i, std::move(all), k);
  }
  return assemble_graph(positions, k, rows);
}

KnnGraph knn(std::span<const Vec3> positions, int k) {
  require(!positions.empty(), "knn: empty point set");
  require(k >= 1, "knn: k must be at least 1");
  const int m = static_cast<int>(positions.size());
  const SpatialGrid grid(positions, grid_cell_size(positions, k));
  std::vector<std::vector<Candidate>> rows(m);
  // one extra candidate in case a coincident lower-index point displaces self
  const int want = std::min(m, k + 1);
  for (int i = 0; i < m; ++i) rows[i] = self_first(i, grid.nearest(positions[i], want), k);
  return assemble_graph(positions, k, rows);
}

std::vector<int> nearest_points(std::span<const Vec3> source, std::span<const Vec3> query) {
  require(!source.empty(), "nearest_points: empty source");
  const SpatialGrid grid(source, grid_cell_size(source, 2));
  std::vector<int> out;
  out.reserve(query.size());
  for (const Vec3& q : query) out.push_back(grid.nearest(q, 1).front().index);
  return out;
}

VoxelGrid voxelize(std::span<const Vec3> positions, const MatrixD& features, double voxel_size) {
  require(voxel_size > 0.0, "voxelize: voxel_size must be positive");
  require(features.rows() == 0 || features.rows() == static_cast<int>(positions.size()),
          "voxelize: features and positions differ in length");
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  if (positions.empty()) {
    grid.pooled_features = MatrixD(0, features.cols());
    return grid;
  }
  grid.origin = componentwise_min(positions);
  std::unordered_map<Eigen::Vector3i, int, CellHash, CellEq> lookup;
  grid.point_to_voxel.resize(positions.size());
  for (int i = 0; i < static_cast<int>(positions.size()); ++i) {
    const Eigen::Vector3i cell = cell_of(positions[i], grid.origin, voxel_size);
    auto [it, inserted] = lookup.try_emplace(cell, grid.size());
    if (inserted) {
      grid.voxel_coords.push_back(cell);
      grid.pooled_positions.push_back(Vec3::Zero());
      grid.voxel_to_points.emplace_back();
    }
    grid.point_to_voxel[i] = it->second;
    grid.voxel_to_points[it->second].push_back(i);
  }
  for (int v = 0; v < grid.size(); ++v) {
    Vec3 sum = Vec3::Zero();
    for (int i : grid.voxel_to_points[v]) sum += positions[i];
    grid.pooled_positions[v] = sum / static_cast<double>(grid.voxel_to_points[v].size());
  }
  grid.pooled_features = features.rows() > 0 ? grid.pooling_weights().apply(features)
                                             : MatrixD(grid.size(), features.cols());
  return grid;
}

VoxelGrid voxelize(const FeaturizedPointCloud& cloud, double voxel_size) {
  return voxelize(cloud.positions, cloud.features, voxel_size);
}

SparseRows VoxelGrid::pooling_weights() const {
  SparseRows w;
  w.cols = point_count();
  for (const auto& members : voxel_to_points) {
    const double share = 1.0 / static_cast<double>(members.size());
    for (int i : members) w.push(i, share);
    w.end_row();
  }
  return w;
}

SparseRows VoxelGrid::copy_weights() const {
  SparseRows w;
  w.cols = size();
  for (int v : point_to_voxel) {
    w.push(v, 1.0);
    w.end_row();
  }
  return w;
}

MatrixD devoxelize(const VoxelGrid& grid, const MatrixD& voxel_features) {
  require(voxel_features.rows() == grid.size(),
          "devoxelize: got " + std::to_string(voxel_features.rows()) + " voxel features for " +
              std::to_string(grid.size()) + " voxels");
  MatrixD out(grid.point_count(), voxel_features.cols());
  for (int i = 0; i < grid.point_count(); ++i) out.row(i) = voxel_features.row(grid.point_to_voxel[i]);
  return out;
}

BilinearTaps bilinear_taps(int height, int width, double u, double v) {
  BilinearTaps taps;
  const bool u_clamped = u <= 0.0 || u >= width - 1;
  const bool v_clamped = v <= 0.0 || v >= height - 1;
  const double uc = std::clamp(u, 0.0, static_cast<double>(width - 1));
  const double vc = std::clamp(v, 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(std::floor(uc)), width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(vc)), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double ax = uc - x0;
  const double ay = vc - y0;
  taps.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  taps.weight = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const double su = u_clamped ? 0.0 : 1.0;
  const double sv = v_clamped ? 0.0 : 1.0;
  taps.dweight_du = {-(1 - ay) * su, (1 - ay) * su, -ay * su, ay * su};
  taps.dweight_dv = {-(1 - ax) * sv, -ax * sv, (1 - ax) * sv, ax * sv};
  return taps;
}

Eigen::VectorXd bilinear_sample(const MatrixD& map, int height, int width, double u, double v) {
  require(map.rows() == height * width, "bilinear_sample: map size mismatch");
  const BilinearTaps taps = bilinear_taps(height, width, u, v);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(map.cols());
  for (int t = 0; t < 4; ++t) out += taps.weight[t] * map.row(taps.index[t]).transpose();
  return out;
}

SparseRows trilinear_weights(std::span<const Vec3> source, double voxel_size,
                             std::span<const Vec3> query) {
  require(!source.empty(), "trilinear_interpolate: empty source");
  require(voxel_size > 0.0, "trilinear_interpolate: voxel_size must be positive");
  const VoxelGrid grid = voxelize(source, MatrixD(), voxel_size);
  std::unordered_map<Eigen::Vector3i, int, CellHash, CellEq> occupied;
  for (int v = 0; v < grid.size(); ++v) occupied.emplace(grid.voxel_coords[v], v);

  SparseRows w;
  w.cols = static_cast<int>(source.size());
  std::vector<int> fallback_rows;
  std::vector<Vec3> fallback_queries;
  for (const Vec3& q : query) {
    const Vec3 g = (q - grid.origin) / voxel_size - Vec3::Constant(0.5);
    const Eigen::Vector3i base(static_cast<int>(std::floor(g.x())), static_cast<int>(std::floor(g.y())),
                               static_cast<int>(std::floor(g.z())));
    const Vec3 f = g - base.cast<double>();
    std::array<std::pair<int, double>, 8> corners;
    int n_corners = 0;
    double total = 0.0;
    for (int c = 0; c < 8; ++c) {
      const Eigen::Vector3i d((c >> 2) & 1, (c >> 1) & 1, c & 1);
      const auto it = occupied.find(base + d);
      if (it == occupied.end()) continue;
      const double weight = (d.x() ? f.x() : 1 - f.x()) * (d.y() ? f.y() : 1 - f.y()) *
                            (d.z() ? f.z() : 1 - f.z());
      if (weight <= 0.0) continue;
      corners[n_corners++] = {it->second, weight};
      total += weight;
    }
    if (total <= 1e-12) {
      fallback_rows.push_back(w.rows());
      fallback_queries.push_back(q);
      w.push(-1, 1.0);
      w.end_row();
      continue;
    }
    for (int c = 0; c < n_corners; ++c) {
      const auto& members = grid.voxel_to_points[corners[c].first];
      const double share = corners[c].second / total / static_cast<double>(members.size());
      for (int i : members) w.push(i, share);
    }
    w.end_row();
  }
  if (!fallback_queries.empty()) {
    const std::vector<int> nearest = nearest_points(source, fallback_queries);
    for (size_t i = 0; i < nearest.size(); ++i) w.index[w.offsets[fallback_rows[i]]] = nearest[i];
  }
  return w;
}

MatrixD trilinear_interpolate(std::span<const Vec3> source, const MatrixD& source_features,
                              double voxel_size, std::span<const Vec3> query) {
  require(source_features.rows() == static_cast<int>(source.size()),
          "trilinear_interpolate: feature count mismatch");
  return trilinear_weights(source, voxel_size, query).apply(source_features);
}

}  // namespace omniseg::geometry
