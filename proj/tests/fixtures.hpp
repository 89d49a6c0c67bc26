#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <functional>
#include <random>

#include "omniseg/fusion3d.hpp"
#include "omniseg/model.hpp"
#include "omniseg/scenedata.hpp"

namespace omniseg::testing {

inline MatrixD random_matrix(int rows, int cols, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline scenedata::SceneConfig small_scene_config(int size = 64, int views = 3) {
  scenedata::SceneConfig c;
  c.width = size;
  c.height = size;
  c.views = views;
  c.min_visible_pixels = 4;
  return c;
}

/// Batch with geometry for the first `views` frames of a generated scene.
inline model::Batch scene_batch(const scenedata::Scene& scene, int views) {
  std::vector<const scenedata::Frame*> frames;
  for (int v = 0; v < views; ++v) frames.push_back(&scene.frames[v]);
  return model::make_batch(frames, true);
}

/// Copy of `tokens` whose voxel positions are mapped through `f`, with relative
/// offsets recomputed from the moved positions. The neighbor graph is rebuilt
/// unless `keep_graph`; rebuilding can resolve exact distance ties differently
/// once rounding has touched the coordinates.
inline fusion3d::Token3DSet remap_tokens(const fusion3d::Token3DSet& tokens,
                                         const std::function<Vec3(const Vec3&)>& f, bool keep_graph = false) {
  fusion3d::Token3DSet t = tokens;
  for (auto& p : t.grid.pooled_positions) p = f(p);
  const int k = tokens.knn.k;
  if (keep_graph) {
    for (int m = 0; m < t.grid.size(); ++m) {
      for (int j = 0; j < k; ++j) {
        t.knn.relative_offset[static_cast<size_t>(m) * k + j] =
            t.grid.pooled_positions[m] - t.grid.pooled_positions[t.knn.neighbor(m, j)];
      }
    }
  } else {
    t.knn = geometry::knn(t.grid.pooled_positions, k);
  }
  auto neighbors = std::make_shared<SparseRows>();
  neighbors->cols = t.grid.size();
  t.scaled_offsets.resize(static_cast<Eigen::Index>(t.grid.size()) * k, 3);
  for (int m = 0; m < t.grid.size(); ++m) {
    for (int j = 0; j < k; ++j) {
      neighbors->push(t.knn.neighbor(m, j), 1.0);
      neighbors->end_row();
      t.scaled_offsets.row(static_cast<Eigen::Index>(m) * k + j) = t.knn.offset(m, j).transpose() / t.voxel_size;
    }
  }
  t.neighbors = neighbors;
  return t;
}

/// Fusion parameters with every block randomized, so residual branches are live.
inline autodiff::ParamStore<double> random_fusion_params(int width, const fusion3d::FusionConfig& config,
                                                         std::uint64_t seed, double sigma = 0.3) {
  autodiff::ParamStore<float> f;
  nn::Initializer init(f, seed);
  fusion3d::register_params(init, "f", width, config);
  nn::randomize(f, seed + 1, sigma);
  return f.cast<double>();
}

inline MatrixD run_attention(autodiff::ParamStore<double>& store, const MatrixD& x,
                             const fusion3d::Token3DSet& tokens, const fusion3d::FusionConfig& config) {
  autodiff::Graph<double> g(false);
  nn::Binder<double> bind(g, store);
  return g.value(fusion3d::relpos_attention(bind, "f", g.constant(x), tokens, config));
}

inline MatrixD run_stage(autodiff::ParamStore<double>& store, const MatrixD& maps,
                         const fusion3d::Token3DSet& tokens, const fusion3d::FusionConfig& config) {
  autodiff::Graph<double> g(false);
  nn::Binder<double> bind(g, store);
  return g.value(fusion3d::fusion_stage(bind, "f", g.constant(maps), tokens, config));
}

inline double relative_difference(const MatrixD& a, const MatrixD& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-12, b.cwiseAbs().maxCoeff());
}

}  // namespace omniseg::testing
