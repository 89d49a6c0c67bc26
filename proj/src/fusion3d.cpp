#include "omniseg/fusion3d.hpp"

namespace omniseg::fusion3d {

void ViewGeometry::validate() const {
  require(intrinsics.size() == poses.size() && depth.size() == poses.size(),
          "view geometry: intrinsics, poses and depth counts differ");
  for (size_t v = 0; v < poses.size(); ++v) {
    intrinsics[v].validate();
    require(depth[v].height() == intrinsics[v].height && depth[v].width() == intrinsics[v].width,
            "view geometry: depth size does not match intrinsics in view " + std::to_string(v));
  }
}

Token3DSet lift_geometry(const ViewGeometry& geometry, const MapShape& shape, int stride, double voxel_size,
                         int k) {
  require(geometry.views() == shape.views, "lift: view count mismatch");
  require(stride >= 1 && voxel_size > 0.0 && k >= 1, "lift: invalid stride, voxel size or k");
  Token3DSet t;
  t.shape = shape;
  t.stride = stride;
  t.voxel_size = voxel_size;
  t.pixel_valid.assign(shape.pixels(), 0);
  t.pixel_positions.assign(shape.pixels(), Vec3::Zero());
  for (int v = 0; v < shape.views; ++v) {
    const geometry::DepthMap& full = geometry.depth[v];
    require(full.height() == shape.height * stride && full.width() == shape.width * stride,
            "lift: depth size does not match map size times stride");
    const geometry::DepthMap small = geometry::nearest_resize_depth(full, stride);
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const double d = small.at(y, x);
        if (!(d > 0.0)) continue;
        const int row = (v * shape.height + y) * shape.width + x;
        t.point_rows.push_back(row);
        t.point_positions.push_back(
            geometry::unproject_pixel(geometry.intrinsics[v], geometry.poses[v], x * stride, y * stride, d));
      }
    }
  }
  require(!t.point_rows.empty(), "lift: no pixel has valid depth in any view (empty token set)");
  if (geometry.augment) {
    scenedata::Augment3DParams a = *geometry.augment;
    a.jitter_seed = mix_seed(a.jitter_seed, static_cast<std::uint64_t>(stride));
    t.point_positions = scenedata::augment_3d(t.point_positions, a);
  }
  for (size_t i = 0; i < t.point_rows.size(); ++i) {
    t.pixel_valid[t.point_rows[i]] = 1;
    t.pixel_positions[t.point_rows[i]] = t.point_positions[i];
  }
  t.grid = geometry::voxelize(t.point_positions, MatrixD(), voxel_size);
  t.knn = geometry::knn(t.grid.pooled_positions, k);

  auto pool = std::make_shared<SparseRows>();
  pool->cols = shape.pixels();
  for (int m = 0; m < t.grid.size(); ++m) {
    const auto& members = t.grid.voxel_to_points[m];
    for (int i : members) pool->push(t.point_rows[i], 1.0 / static_cast<double>(members.size()));
    pool->end_row();
  }
  t.pool = pool;

  std::vector<int> voxel_of_row(shape.pixels(), -1);
  for (size_t i = 0; i < t.point_rows.size(); ++i) voxel_of_row[t.point_rows[i]] = t.grid.point_to_voxel[i];
  auto to_pixels = std::make_shared<SparseRows>();
  to_pixels->cols = t.grid.size();
  for (int r = 0; r < shape.pixels(); ++r) {
    if (voxel_of_row[r] >= 0) to_pixels->push(voxel_of_row[r], 1.0);
    to_pixels->end_row();
  }
  t.to_pixels = to_pixels;

  auto neighbors = std::make_shared<SparseRows>();
  neighbors->cols = t.grid.size();
  t.scaled_offsets.resize(static_cast<Eigen::Index>(t.grid.size()) * k, 3);
  for (int m = 0; m < t.grid.size(); ++m) {
    for (int j = 0; j < k; ++j) {
      neighbors->push(t.knn.neighbor(m, j), 1.0);
      neighbors->end_row();
      t.scaled_offsets.row(static_cast<Eigen::Index>(m) * k + j) = t.knn.offset(m, j).transpose() / voxel_size;
    }
  }
  t.neighbors = neighbors;
  return t;
}

void register_params(nn::Initializer& init, const std::string& prefix, int width, const FusionConfig& config) {
  require(width % config.heads == 0, "fusion3d: width must be divisible by the head count");
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    init.layer_norm(p + ".ln1", width);
    init.mlp(p + ".pos", 3, width / 2, width);
    init.linear(p + ".q", width, width);
    init.linear(p + ".k", width, width);
    init.linear(p + ".v", width, width);
    init.linear(p + ".o", width, width, true);
    init.layer_norm(p + ".ln2", width);
    init.mlp(p + ".ffn", width, 2 * width, width, true);
  }
}

template <typename T>
Var lift_features(autodiff::Graph<T>& g, Var maps, const Token3DSet& tokens) {
  require(g.rows(maps) == tokens.shape.pixels(), "lift: map rows do not match the token set");
  return g.sparse_mix(tokens.pool, maps);
}

template <typename T>
Var relpos_attention(nn::Binder<T>& bind, const std::string& prefix, Var tokens_in, const Token3DSet& tokens,
                     const FusionConfig& config) {
  auto& g = bind.graph();
  const int m = tokens.tokens();
  const int k = tokens.knn.k;
  require(g.rows(tokens_in) == m, "relpos_attention: token count mismatch");
  const Var offsets = g.constant(tokens.scaled_offsets.template cast<T>());
  const Var origin = g.constant(Matrix<T>::Zero(1, 3));
  Var x = tokens_in;
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    const Var h = nn::layer_norm(bind, x, p + ".ln1");
    const Var self_pos = g.broadcast_row(nn::mlp(bind, origin, p + ".pos"), m);
    const Var q = nn::linear(bind, g.add(h, self_pos), p + ".q");
    const Var hn = g.sparse_mix(tokens.neighbors, h);
    const Var rel_pos = nn::mlp(bind, offsets, p + ".pos");
    const Var key = nn::linear(bind, g.add(hn, rel_pos), p + ".k");
    const Var value = nn::linear(bind, hn, p + ".v");
    const Var attended = g.grouped_attention(q, key, value, k, config.heads);
    x = g.add(x, nn::linear(bind, attended, p + ".o"));
    x = g.add(x, nn::mlp(bind, nn::layer_norm(bind, x, p + ".ln2"), p + ".ffn"));
  }
  return x;
}

template <typename T>
Var project_to_2d(autodiff::Graph<T>& g, Var maps, Var voxel_features, const Token3DSet& tokens) {
  require(g.rows(voxel_features) == tokens.tokens(), "project_to_2d: feature count mismatch");
  auto rows = std::make_shared<const std::vector<int>>(tokens.point_rows);
  auto copy = std::make_shared<const SparseRows>(tokens.grid.copy_weights());
  return g.scatter_rows(maps, rows, g.sparse_mix(copy, voxel_features));
}

template <typename T>
Var fusion_stage(nn::Binder<T>& bind, const std::string& prefix, Var maps, const Token3DSet& tokens,
                 const FusionConfig& config) {
  auto& g = bind.graph();
  if (config.layers == 0) return maps;
  const Var pooled = lift_features(g, maps, tokens);
  const Var updated = relpos_attention(bind, prefix, pooled, tokens, config);
  return g.add(maps, g.sparse_mix(tokens.to_pixels, g.sub(updated, pooled)));
}

template Var lift_features(autodiff::Graph<float>&, Var, const Token3DSet&);
template Var lift_features(autodiff::Graph<double>&, Var, const Token3DSet&);
template Var relpos_attention(nn::Binder<float>&, const std::string&, Var, const Token3DSet&, const FusionConfig&);
template Var relpos_attention(nn::Binder<double>&, const std::string&, Var, const Token3DSet&, const FusionConfig&);
template Var project_to_2d(autodiff::Graph<float>&, Var, Var, const Token3DSet&);
template Var project_to_2d(autodiff::Graph<double>&, Var, Var, const Token3DSet&);
template Var fusion_stage(nn::Binder<float>&, const std::string&, Var, const Token3DSet&, const FusionConfig&);
template Var fusion_stage(nn::Binder<double>&, const std::string&, Var, const Token3DSet&, const FusionConfig&);

}  // namespace omniseg::fusion3d
