#include <doctest.h>

#include <Eigen/Geometry>
#include <random>

#include "omniseg/geometry.hpp"

using namespace omniseg;
using namespace omniseg::geometry;

namespace {

CameraIntrinsics intr(double fx, double fy, double cx, double cy, int w = 16, int h = 16) {
  CameraIntrinsics k;
  k.fx = fx;
  k.fy = fy;
  k.cx = cx;
  k.cy = cy;
  k.width = w;
  k.height = h;
  return k;
}

CameraPose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  CameraPose p;
  p.rotation = q.toRotationMatrix();
  p.translation = Vec3(n(rng), n(rng), n(rng)) * 3.0;
  return p;
}

std::vector<Vec3> random_cloud(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

}  // namespace

TEST_CASE("unprojection follows the pinhole model") {
  const Vec3 p = unproject_pixel(intr(2, 2, 1, 1), CameraPose{}, 3, 4, 4);
  // ((3-1)*4/2, (4-1)*4/2, 4)
  CHECK(p.x() == doctest::Approx(4.0));
  CHECK(p.y() == doctest::Approx(6.0));
  CHECK(p.z() == doctest::Approx(4.0));

  std::mt19937_64 rng(3);
  const CameraPose pose = random_pose(rng);
  const Vec3 w = unproject_pixel(intr(1, 1, 0, 0), pose, 0, 0, 2);
  CHECK((w - (pose.rotation * Vec3(0, 0, 2) + pose.translation)).norm() < 1e-12);
}

TEST_CASE("unproject_depth omits missing depth and records provenance") {
  DepthMap d(2, 3, 1.0);
  d.at(0, 1) = 0.0;
  const auto cloud = unproject_depth(intr(1, 1, 0, 0, 3, 2), CameraPose{}, d, 2);
  CHECK(cloud.size() == 5);
  for (const auto& ref : cloud.provenance) {
    CHECK(ref.view == 2);
    CHECK_FALSE((ref.row == 0 && ref.col == 1));
  }
  CHECK_THROWS_AS(unproject_depth(intr(1, 1, 0, 0, 4, 2), CameraPose{}, d), ContractViolation);
}

TEST_CASE("projection inverts unprojection over random cameras") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> f(20, 400), c(0, 64), pix(0, 63), depth(0.1, 20);
  double worst_px = 0, worst_depth = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto k = intr(f(rng), f(rng), c(rng), c(rng), 64, 64);
    const CameraPose pose = random_pose(rng);
    const double u = std::round(pix(rng)), v = std::round(pix(rng)), z = depth(rng);
    const Vec3 p = unproject_pixel(k, pose, u, v, z);
    const Projection pr = project_points(k, pose, std::span<const Vec3>(&p, 1))[0];
    worst_px = std::max({worst_px, std::abs(pr.u - u), std::abs(pr.v - v)});
    worst_depth = std::max(worst_depth, std::abs(pr.depth - z));
  }
  CHECK(worst_px <= 1e-4);
  CHECK(worst_depth <= 1e-6);
}

TEST_CASE("points behind the camera are flagged") {
  const std::vector<Vec3> pts{Vec3(0, 0, 1), Vec3(0, 0, -1)};
  const auto pr = project_points(intr(1, 1, 0, 0), CameraPose{}, pts);
  CHECK(pr[0].u == doctest::Approx(0.0));
  CHECK(pr[0].depth == doctest::Approx(1.0));
  CHECK_FALSE(pr[0].behind_camera);
  CHECK(pr[1].behind_camera);
}

TEST_CASE("camera pose validation") {
  CameraPose p;
  CHECK_NOTHROW(p.validate());
  p.rotation(0, 0) = -1;  // det -1
  CHECK_THROWS_AS(p.validate(), ContractViolation);
  p.rotation(0, 0) = 1.1;
  CHECK_THROWS_AS(p.validate(), ContractViolation);
}

TEST_CASE("hole filling") {
  SUBCASE("single hole") {
    DepthMap d(3, 3, 2.0);
    d.at(1, 1) = 0;
    CHECK(fill_depth_holes(d).at(1, 1) == 2.0);
  }
  SUBCASE("all zero stays zero") {
    DepthMap d(4, 5, 0.0);
    CHECK(fill_depth_holes(d) == d);
  }
  SUBCASE("row tie-break prefers the neighbor above") {
    DepthMap d(2, 2, 0.0);
    d.at(0, 1) = 1.0;  // above (1,1)
    d.at(1, 0) = 3.0;  // left of (1,1)
    CHECK(fill_depth_holes(d).at(1, 1) == 1.0);
  }
  SUBCASE("idempotent and valid pixels untouched") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 50; ++t) {
      DepthMap d(9, 7);
      for (auto& v : d.values()) v = u(rng) < 0.4 ? 0.0 : 1.0 + u(rng);
      const DepthMap once = fill_depth_holes(d);
      CHECK(fill_depth_holes(once) == once);
      for (size_t i = 0; i < d.values().size(); ++i) {
        if (d.values()[i] > 0) CHECK(once.values()[i] == d.values()[i]);
      }
    }
  }
}

TEST_CASE("nearest resize") {
  DepthMap d(4, 4);
  for (int i = 0; i < 16; ++i) d.values()[i] = i + 1;
  CHECK(nearest_resize_depth(d, 1) == d);
  const DepthMap r = nearest_resize_depth(d, 2);
  CHECK(r.height() == 2);
  CHECK(r.at(0, 0) == 1);
  CHECK(r.at(0, 1) == 3);
  CHECK(r.at(1, 0) == 9);
  CHECK(r.at(1, 1) == 11);
  CHECK_THROWS_AS(nearest_resize_depth(d, 3), ContractViolation);
}

TEST_CASE("voxelize pools means") {
  MatrixD f(2, 1);
  f << 1.0, 3.0;
  const std::vector<Vec3> two{Vec3(0.01, 0, 0), Vec3(0.02, 0, 0)};
  const VoxelGrid g = voxelize(two, f, 0.05);
  REQUIRE(g.size() == 1);
  CHECK(g.pooled_positions[0].x() == doctest::Approx(0.015));
  CHECK(g.pooled_features(0, 0) == doctest::Approx(2.0));

  const std::vector<Vec3> apart{Vec3(0, 0, 0), Vec3(0.06, 0, 0)};
  CHECK(voxelize(apart, f, 0.05).size() == 2);
  CHECK(voxelize(std::vector<Vec3>{}, MatrixD(0, 1), 0.05).size() == 0);
}

TEST_CASE("voxel pooling conserves feature mass") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto pts = random_cloud(rng, 300, 1.0);
    const MatrixD f = MatrixD::Random(300, 4);
    const VoxelGrid g = voxelize(pts, f, 0.2);
    Eigen::RowVectorXd mass = Eigen::RowVectorXd::Zero(4);
    for (int v = 0; v < g.size(); ++v) mass += g.pooled_features.row(v) * static_cast<double>(g.voxel_to_points[v].size());
    const Eigen::RowVectorXd truth = f.colwise().sum();
    CHECK((mass - truth).norm() <= 1e-5 * std::max(1.0, truth.norm()));
    CHECK(g.size() <= 300);
    for (int i = 0; i < 300; ++i) {
      const auto& members = g.voxel_to_points[g.point_to_voxel[i]];
      CHECK(std::count(members.begin(), members.end(), i) == 1);
    }
  }
}

TEST_CASE("voxelize is invariant under lattice translations") {
  std::mt19937_64 rng(21);
  const double size = 0.125;
  const auto pts = random_cloud(rng, 200, 1.0);
  const MatrixD f = MatrixD::Random(200, 2);
  const Vec3 shift = Vec3(3, -7, 11) * size;
  std::vector<Vec3> moved = pts;
  for (auto& p : moved) p += shift;
  const VoxelGrid a = voxelize(pts, f, size), b = voxelize(moved, f, size);
  REQUIRE(a.size() == b.size());
  CHECK(a.point_to_voxel == b.point_to_voxel);
  for (int v = 0; v < a.size(); ++v) CHECK((b.pooled_positions[v] - a.pooled_positions[v] - shift).norm() <= 1e-6);
}

TEST_CASE("devoxelize copies voxel features back") {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.01, 0, 0)};
  MatrixD f(3, 1);
  f << 1, 2, 3;
  const VoxelGrid g = voxelize(pts, f, 0.1);
  const MatrixD back = devoxelize(g, g.pooled_features);
  CHECK(back(0, 0) == back(2, 0));
  CHECK(back(1, 0) == 2);
  const VoxelGrid singleton = voxelize(pts, f, 0.001);
  CHECK(devoxelize(singleton, singleton.pooled_features) == f);
  CHECK_THROWS_AS(devoxelize(g, MatrixD(5, 1)), ContractViolation);
}

TEST_CASE("knn") {
  SUBCASE("collinear points") {
    const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)};
    const KnnGraph g = knn(pts, 2);
    CHECK(g.neighbor(0, 0) == 0);
    CHECK(g.neighbor(0, 1) == 1);
    CHECK(g.offset(0, 0).norm() == 0.0);
    CHECK(g.offset(0, 1).x() == doctest::Approx(-1.0));
  }
  SUBCASE("k = 1 is self") {
    std::mt19937_64 rng(1);
    const auto pts = random_cloud(rng, 30, 1.0);
    const KnnGraph g = knn(pts, 1);
    for (int i = 0; i < 30; ++i) CHECK(g.neighbor(i, 0) == i);
  }
  SUBCASE("padding repeats the last neighbor") {
    const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0)};
    const KnnGraph g = knn(pts, 5);
    for (int j = 1; j < 5; ++j) CHECK(g.neighbor(0, j) == 1);
    CHECK(g.neighbor(1, 0) == 1);
  }
  SUBCASE("accelerated path equals brute force") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> size(1, 500), kk(1, 12);
    for (int t = 0; t < 200; ++t) {
      auto pts = random_cloud(rng, size(rng), 2.0);
      if (t % 4 == 0) {
        for (auto& p : pts) p = (p * 4).array().round() / 4;  // many exact ties
      }
      const int k = kk(rng);
      CHECK(knn(pts, k).neighbor_index == knn_brute_force(pts, k).neighbor_index);
    }
  }
}

TEST_CASE("bilinear sampling") {
  MatrixD map(6, 1);
  for (int i = 0; i < 6; ++i) map(i, 0) = i * i;
  CHECK(bilinear_sample(map, 2, 3, 2, 1)(0) == doctest::Approx(25));
  CHECK(bilinear_sample(map, 2, 3, 0.5, 0)(0) == doctest::Approx(0.5));
  CHECK(bilinear_sample(map, 2, 3, -5, 1)(0) == doctest::Approx(bilinear_sample(map, 2, 3, 0, 1)(0)));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 10);
  for (int t = 0; t < 1000; ++t) {
    const BilinearTaps taps = bilinear_taps(7, 9, u(rng), u(rng));
    CHECK(taps.weight[0] + taps.weight[1] + taps.weight[2] + taps.weight[3] == doctest::Approx(1.0).epsilon(1e-7));
  }
}

TEST_CASE("trilinear interpolation") {
  const double size = 0.1;
  SUBCASE("query at an isolated source point") {
    const std::vector<Vec3> src{Vec3(0, 0, 0), Vec3(1, 1, 1)};
    MatrixD f(2, 1);
    f << 5, 7;
    const std::vector<Vec3> q{Vec3(1, 1, 1)};
    CHECK(trilinear_interpolate(src, f, size, q)(0, 0) == doctest::Approx(7));
  }
  SUBCASE("midway between two occupied cells") {
    // cell centers at origin + 0.05 and origin + 0.15 along x
    const std::vector<Vec3> src{Vec3(0, 0, 0), Vec3(0.1, 0, 0)};
    MatrixD f(2, 1);
    f << 2, 6;
    const std::vector<Vec3> q{Vec3(0.1, 0.05, 0.05)};
    CHECK(trilinear_interpolate(src, f, size, q)(0, 0) == doctest::Approx(4));
  }
  SUBCASE("far queries use the nearest source point") {
    const std::vector<Vec3> src{Vec3(0, 0, 0), Vec3(1, 0, 0)};
    MatrixD f(2, 1);
    f << 2, 6;
    const std::vector<Vec3> q{Vec3(5, 0, 0), Vec3(-4, 0, 0)};
    const MatrixD out = trilinear_interpolate(src, f, size, q);
    CHECK(out(0, 0) == 6);
    CHECK(out(1, 0) == 2);
  }
  SUBCASE("partition of unity with full occupancy") {
    std::vector<Vec3> src;
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y)
        for (int z = 0; z < 4; ++z) src.emplace_back((x + 0.5) * size, (y + 0.5) * size, (z + 0.5) * size);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.1, 0.3);
    std::vector<Vec3> q(200);
    for (auto& p : q) p = Vec3(u(rng), u(rng), u(rng));
    const SparseRows w = trilinear_weights(src, size, q);
    for (int r = 0; r < w.rows(); ++r) {
      double s = 0;
      for (int i = w.offsets[r]; i < w.offsets[r + 1]; ++i) s += w.weight[i];
      CHECK(std::abs(s - 1.0) <= 1e-7);
    }
  }
}
