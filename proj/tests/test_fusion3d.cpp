#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "fixtures.hpp"

using namespace omniseg;
using namespace omniseg::fusion3d;
using namespace omniseg::testing;

namespace {

// A fronto-parallel plane at constant depth seen by identical cameras.
ViewGeometry plane_geometry(int views, int size, double depth) {
  ViewGeometry g;
  for (int v = 0; v < views; ++v) {
    geometry::CameraIntrinsics in;
    in.fx = in.fy = size;
    in.cx = in.cy = (size - 1) / 2.0;
    in.width = in.height = size;
    g.intrinsics.push_back(in);
    g.poses.push_back(geometry::CameraPose{});
    g.depth.emplace_back(size, size, depth);
  }
  return g;
}

FusionConfig small_config() {
  FusionConfig c;
  c.heads = 2;
  c.layers = 2;
  c.k = 6;
  return c;
}

}  // namespace

TEST_CASE("lift: singleton voxels, coincident views and one giant voxel") {
  const int size = 16, stride = 4, h = size / stride;
  SUBCASE("voxels smaller than the point spacing") {
    const Token3DSet t = lift_geometry(plane_geometry(1, size, 2.0), {1, h, h}, stride, 1e-3, 3);
    CHECK(t.tokens() == h * h);
  }
  SUBCASE("two co-posed views average their coincident points") {
    const Token3DSet t = lift_geometry(plane_geometry(2, size, 2.0), {2, h, h}, stride, 1e-3, 3);
    CHECK(t.tokens() == h * h);
    autodiff::Graph<double> g(false);
    const MatrixD maps = random_matrix(2 * h * h, 5, 1);
    const MatrixD pooled = g.value(lift_features(g, g.constant(maps), t));
    for (int m = 0; m < t.tokens(); ++m) {
      const auto& members = t.grid.voxel_to_points[m];
      REQUIRE(members.size() == 2);
      const MatrixD expect = 0.5 * (maps.row(t.point_rows[members[0]]) + maps.row(t.point_rows[members[1]]));
      CHECK((pooled.row(m) - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("an enormous voxel holds the centroid and the mean feature") {
    const Token3DSet t = lift_geometry(plane_geometry(1, size, 2.0), {1, h, h}, stride, 1e6, 1);
    REQUIRE(t.tokens() == 1);
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : t.point_positions) centroid += p;
    centroid /= static_cast<double>(t.point_positions.size());
    CHECK((t.grid.pooled_positions[0] - centroid).norm() < 1e-12);
    autodiff::Graph<double> g(false);
    const MatrixD maps = random_matrix(h * h, 4, 2);
    const MatrixD pooled = g.value(lift_features(g, g.constant(maps), t));
    CHECK((pooled.row(0) - maps.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("no depth anywhere") {
    CHECK_THROWS_AS(lift_geometry(plane_geometry(1, size, 0.0), {1, h, h}, stride, 0.1, 3), ContractViolation);
  }
  SUBCASE("map size must match the depth at the given stride") {
    CHECK_THROWS_AS(lift_geometry(plane_geometry(1, size, 1.0), {1, h + 1, h}, stride, 0.1, 3), ContractViolation);
  }
}

TEST_CASE("lifted points sit at the unprojected pixel of the resized depth") {
  const scenedata::Scene s = scenedata::generate_scene(3, small_scene_config(64, 2));
  const model::Batch b = scene_batch(s, 2);
  const Token3DSet t = lift_geometry(*b.geometry, {2, 8, 8}, 8, 0.1, 4);
  const auto& geo = *b.geometry;
  for (size_t i = 0; i < t.point_rows.size(); ++i) {
    const int row = t.point_rows[i], v = row / 64, y = (row % 64) / 8, x = row % 8;
    const Vec3 p = geometry::unproject_pixel(geo.intrinsics[v], geo.poses[v], x * 8, y * 8, geo.depth[v].at(y * 8, x * 8));
    CHECK((p - t.point_positions[i]).norm() < 1e-12);
  }
  CHECK(t.knn.size() == t.tokens());
}

TEST_CASE("project_to_2d writes voxel features back to member pixels") {
  const scenedata::Scene s = scenedata::generate_scene(5, small_scene_config(64, 2));
  const model::Batch b = scene_batch(s, 2);
  const MapShape shape{2, 16, 16};
  SUBCASE("singleton voxels reproduce the maps") {
    const Token3DSet t = lift_geometry(*b.geometry, shape, 4, 1e-4, 4);
    REQUIRE(t.tokens() == static_cast<int>(t.point_rows.size()));
    autodiff::Graph<double> g(false);
    const MatrixD base = random_matrix(shape.pixels(), 3, 3);
    const Var maps = g.constant(base);
    const MatrixD out = g.value(project_to_2d(g, maps, lift_features(g, maps, t), t));
    CHECK((out - base).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("coarse voxels share features and untouched pixels keep theirs") {
    const Token3DSet t = lift_geometry(*b.geometry, shape, 4, 0.3, 4);
    autodiff::Graph<double> g(false);
    const MatrixD base = random_matrix(shape.pixels(), 3, 4);
    const MatrixD feats = random_matrix(t.tokens(), 3, 5);
    const MatrixD out = g.value(project_to_2d(g, g.constant(base), g.constant(feats), t));
    for (int r = 0; r < shape.pixels(); ++r) {
      if (!t.pixel_valid[r]) CHECK(out.row(r) == base.row(r));
    }
    for (size_t i = 0; i < t.point_rows.size(); ++i) {
      CHECK(out.row(t.point_rows[i]) == feats.row(t.grid.point_to_voxel[i]));
    }
  }
}

TEST_CASE("zero-initialized residual branches make the stage an identity") {
  const scenedata::Scene s = scenedata::generate_scene(6, small_scene_config(64, 3));
  const model::Batch b = scene_batch(s, 3);
  const MapShape shape{3, 16, 16};
  const FusionConfig cfg = small_config();
  const Token3DSet t = lift_geometry(*b.geometry, shape, 4, 0.05, cfg.k);
  autodiff::ParamStore<float> f;
  nn::Initializer init(f, 11);
  register_params(init, "f", 8, cfg);
  auto store = f.cast<double>();
  const MatrixD maps = random_matrix(shape.pixels(), 8, 6);
  CHECK(run_stage(store, maps, t, cfg) == maps);
  autodiff::Graph<double> g(false);
  const MatrixD pooled = g.value(lift_features(g, g.constant(maps), t));
  CHECK(run_attention(store, pooled, t, cfg) == pooled);
}

TEST_CASE("attention is invariant to translating every token") {
  const scenedata::Scene s = scenedata::generate_scene(7, small_scene_config(64, 3));
  const model::Batch b = scene_batch(s, 3);
  const FusionConfig cfg = small_config();
  const Token3DSet t = lift_geometry(*b.geometry, {3, 16, 16}, 4, 0.05, cfg.k);
  auto store = random_fusion_params(8, cfg, 21);
  const MatrixD x = random_matrix(t.tokens(), 8, 7);
  const MatrixD ref = run_attention(store, x, t, cfg);
  CHECK(run_attention(store, x, remap_tokens(t, [](const Vec3& p) { return p; }), cfg) == ref);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 shift(u(rng), u(rng), u(rng));
    const auto move = [&](const Vec3& p) { return p + shift; };
    const MatrixD moved = run_attention(store, x, remap_tokens(t, move, true), cfg);
    CHECK(relative_difference(moved, ref) <= 1e-5);
    // a rebuilt graph may only differ where two candidates are equidistant
    const Token3DSet rebuilt = remap_tokens(t, move);
    for (int m = 0; m < t.tokens(); ++m) {
      for (int j = 0; j < cfg.k; ++j) {
        const Vec3 d = t.grid.pooled_positions[m] - t.grid.pooled_positions[rebuilt.knn.neighbor(m, j)];
        CHECK(std::abs(d.norm() - t.knn.offset(m, j).norm()) < 1e-12);
      }
    }
  }
  SUBCASE("a quarter turn about the vertical axis changes the output") {
    const Mat3 r = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitY()).toRotationMatrix();
    const MatrixD turned = run_attention(store, x, remap_tokens(t, [&](const Vec3& p) { return r * p; }, true), cfg);
    CHECK(relative_difference(turned, ref) > 1e-3);
  }
}

TEST_CASE("the full stage is invariant to whole-voxel translations") {
  const scenedata::Scene s = scenedata::generate_scene(8, small_scene_config(64, 3));
  const model::Batch b = scene_batch(s, 3);
  const FusionConfig cfg = small_config();
  const MapShape shape{3, 16, 16};
  const double voxel = 0.125;
  auto store = random_fusion_params(8, cfg, 31);
  const MatrixD maps = random_matrix(shape.pixels(), 8, 8);
  const Token3DSet t = lift_geometry(*b.geometry, shape, 4, voxel, cfg.k);
  const MatrixD ref = run_stage(store, maps, t, cfg);
  CHECK(relative_difference(ref, maps) > 1e-3);  // the stage does something

  fusion3d::ViewGeometry moved = *b.geometry;
  const Vec3 shift = voxel * Vec3(3, -2, 7);
  for (auto& p : moved.poses) p.translation += shift;
  const Token3DSet tm = lift_geometry(moved, shape, 4, voxel, cfg.k);
  CHECK(tm.tokens() == t.tokens());
  CHECK(relative_difference(run_stage(store, maps, tm, cfg), ref) <= 1e-5);

  fusion3d::ViewGeometry turned = *b.geometry;
  scenedata::Augment3DParams quarter;
  quarter.rotation = std::numbers::pi / 2;
  turned.augment = quarter;
  const Token3DSet tr = lift_geometry(turned, shape, 4, voxel, cfg.k);
  CHECK(relative_difference(run_stage(store, maps, tr, cfg), ref) > 1e-3);
}

TEST_CASE("a lone token attends only to itself") {
  const Token3DSet t = lift_geometry(plane_geometry(1, 8, 1.0), {1, 2, 2}, 4, 1e6, 1);
  REQUIRE(t.tokens() == 1);
  FusionConfig cfg = small_config();
  cfg.k = 1;
  cfg.layers = 1;
  auto store = random_fusion_params(4, cfg, 41);
  const MatrixD x = random_matrix(1, 4, 9);
  // by hand: attention over one neighbor returns its value
  autodiff::Graph<double> g(false);
  nn::Binder<double> bind(g, store);
  const Var xv = g.constant(x);
  const Var h = nn::layer_norm(bind, xv, "f.l0.ln1");
  const Var v = nn::linear(bind, h, "f.l0.v");
  Var y = g.add(xv, nn::linear(bind, v, "f.l0.o"));
  y = g.add(y, nn::mlp(bind, nn::layer_norm(bind, y, "f.l0.ln2"), "f.l0.ffn"));
  CHECK((run_attention(store, x, t, cfg) - g.value(y)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("voxel size scales with stride") {
  FusionConfig c;
  c.voxel_size_at_4 = 0.04;
  CHECK(c.voxel_size(4) == doctest::Approx(0.04));
  CHECK(c.voxel_size(32) == doctest::Approx(0.32));
}
