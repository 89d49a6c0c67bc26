#include <doctest.h>

#include <random>

#include "omniseg/autodiff.hpp"
#include "omniseg/geometry.hpp"

using namespace omniseg;
using namespace omniseg::autodiff;

namespace {

using Md = Matrix<double>;

Md random(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Md m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

// Scalar objective sum(W .* f(inputs)) with a fixed random W; compares the
// analytic gradient of every input against central differences.
double max_gradient_error(ParamStore<double>& store, const Builder& f, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Md weights;
  const auto objective = [&](bool record) {
    Graph<double> g(record);
    std::vector<Var> in;
    for (auto& b : store.blocks()) in.push_back(g.param(*b));
    const Var out = f(g, in);
    if (weights.size() == 0) weights = random(g.rows(out), g.cols(out), rng);
    const Var loss = g.sum_all(g.mul(out, g.constant(weights)));
    if (record) g.backward(loss);
    return g.value(loss)(0, 0);
  };
  store.zero_grad();
  objective(true);
  double worst = 0.0;
  for (auto& b : store.blocks()) {
    const Md analytic = b->grad.size() ? b->grad : Md::Zero(b->value.rows(), b->value.cols());
    for (Eigen::Index i = 0; i < b->value.size(); ++i) {
      const double saved = b->value.data()[i];
      const double h = 1e-6;
      b->value.data()[i] = saved + h;
      const double up = objective(false);
      b->value.data()[i] = saved - h;
      const double down = objective(false);
      b->value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({1e-6, std::abs(a), std::abs(numeric)}));
    }
  }
  return worst;
}

Md eval(ParamStore<double>& store, const Builder& f) {
  Graph<double> g(false);
  std::vector<Var> in;
  for (auto& b : store.blocks()) in.push_back(g.param(*b));
  return g.value(f(g, in));
}

}  // namespace

TEST_CASE("elementwise and matrix ops have exact gradients") {
  std::mt19937_64 rng(1);
  ParamStore<double> s;
  s.add("a", random(4, 3, rng));
  s.add("b", random(4, 3, rng));
  s.add("c", random(3, 5, rng));
  s.add("row", random(1, 3, rng));
  s.add("bias", random(1, 5, rng));

  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.matmul(v[0], v[2]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.matmul_nt(v[0], v[1]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.linear(v[0], v[2], v[4]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.add(v[0], v[1]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.sub(v[0], v[1]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.mul(v[0], v[1]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.scale(v[0], -2.5); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.add_row(v[0], v[3]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.mul_row(v[0], v[3]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.relu(v[0]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.softmax_rows(v[0]); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.layer_norm(v[0], v[3], g.scale(v[3], 0.5)); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.broadcast_row(v[3], 6); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.concat_rows({v[0], v[1], v[3]}); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) { return g.slice_rows(v[0], 1, 2); }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) {
          auto rows = std::make_shared<const std::vector<int>>(std::vector<int>{3, 0});
          return g.scatter_rows(v[0], rows, g.slice_rows(v[1], 0, 2));
        }) < 1e-6);
  CHECK(max_gradient_error(s, [](auto& g, auto& v) {
          auto w = std::make_shared<SparseRows>();
          w->cols = 4;
          w->push(0, 0.5);
          w->push(3, -1.0);
          w->end_row();
          w->push(2, 2.0);
          w->push(2, 1.0);  // repeated column
          w->end_row();
          return g.sparse_mix(std::shared_ptr<const SparseRows>(w), v[0]);
        }) < 1e-6);
}

TEST_CASE("forward values of basic ops") {
  std::mt19937_64 rng(2);
  ParamStore<double> s;
  const Md a = random(3, 4, rng), b = random(4, 2, rng);
  s.add("a", a);
  s.add("b", b);
  CHECK((eval(s, [](auto& g, auto& v) { return g.matmul(v[0], v[1]); }) - a * b).norm() < 1e-12);
  const Md sm = eval(s, [](auto& g, auto& v) { return g.softmax_rows(v[0]); });
  for (int r = 0; r < 3; ++r) CHECK(sm.row(r).sum() == doctest::Approx(1.0));
  const Md ln = eval(s, [](auto& g, auto& v) {
    return g.layer_norm(v[0], g.constant(Md::Ones(1, 4)), g.constant(Md::Zero(1, 4)));
  });
  for (int r = 0; r < 3; ++r) {
    CHECK(std::abs(ln.row(r).mean()) < 1e-12);
    const double var = (a.row(r).array() - a.row(r).mean()).square().mean();
    CHECK(ln.row(r).squaredNorm() / 4 == doctest::Approx(var / (var + 1e-5)).epsilon(1e-12));
  }
}

TEST_CASE("conv2d matches a direct convolution and has exact gradients") {
  std::mt19937_64 rng(3);
  const MapShape in{2, 5, 6};
  const int cin = 3, cout = 4;
  for (int stride : {1, 2}) {
    ParamStore<double> s;
    s.add("x", random(in.pixels(), cin, rng));
    s.add("w", random(9 * cin, cout, rng));
    s.add("b", random(1, cout, rng));
    MapShape out_shape;
    const Md out = eval(s, [&](auto& g, auto& v) { return g.conv2d(v[0], in, v[1], v[2], 3, stride, 1, &out_shape); });
    CHECK(out_shape.height == (5 + 2 - 3) / stride + 1);
    CHECK(out_shape.width == (6 + 2 - 3) / stride + 1);
    const Md& x = s.get("x").value;
    const Md& w = s.get("w").value;
    double worst = 0;
    for (int v = 0; v < in.views; ++v) {
      for (int oy = 0; oy < out_shape.height; ++oy) {
        for (int ox = 0; ox < out_shape.width; ++ox) {
          for (int co = 0; co < cout; ++co) {
            double acc = s.get("b").value(0, co);
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                if (iy < 0 || ix < 0 || iy >= in.height || ix >= in.width) continue;
                for (int ci = 0; ci < cin; ++ci) {
                  acc += x(v * in.pixels_per_view() + iy * in.width + ix, ci) * w((ky * 3 + kx) * cin + ci, co);
                }
              }
            }
            const int row = v * out_shape.pixels_per_view() + oy * out_shape.width + ox;
            worst = std::max(worst, std::abs(acc - out(row, co)));
          }
        }
      }
    }
    CHECK(worst < 1e-12);
    CHECK(max_gradient_error(s, [&](auto& g, auto& v) {
            MapShape o;
            return g.conv2d(v[0], in, v[1], v[2], 3, stride, 1, &o);
          }) < 1e-6);
  }
}

TEST_CASE("attention matches a direct evaluation and has exact gradients") {
  std::mt19937_64 rng(4);
  ParamStore<double> s;
  s.add("q", random(3, 4, rng));
  s.add("k", random(5, 4, rng));
  s.add("v", random(5, 4, rng));
  const int heads = 2;
  const Md out = eval(s, [&](auto& g, auto& v) { return g.attention(v[0], v[1], v[2], heads); });
  const Md &q = s.get("q").value, &k = s.get("k").value, &val = s.get("v").value;
  Md ref(3, 4);
  for (int h = 0; h < heads; ++h) {
    const Md logits = q.middleCols(h * 2, 2) * k.middleCols(h * 2, 2).transpose() / std::sqrt(2.0);
    for (int i = 0; i < 3; ++i) {
      Eigen::RowVectorXd p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
      p /= p.sum();
      ref.block(i, h * 2, 1, 2) = p * val.middleCols(h * 2, 2);
    }
  }
  CHECK((out - ref).norm() < 1e-12);
  CHECK(max_gradient_error(s, [&](auto& g, auto& v) { return g.attention(v[0], v[1], v[2], heads); }) < 1e-6);

  ParamStore<double> grouped;
  grouped.add("q", random(3, 4, rng));
  grouped.add("k", random(6, 4, rng));
  grouped.add("v", random(6, 4, rng));
  CHECK(max_gradient_error(grouped, [&](auto& g, auto& v) { return g.grouped_attention(v[0], v[1], v[2], 2, 2); }) <
        1e-6);
  // a query attending over a single key returns that value
  const Md one = eval(grouped, [&](auto& g, auto& v) {
    return g.grouped_attention(g.slice_rows(v[0], 0, 1), g.slice_rows(v[1], 0, 1), g.slice_rows(v[2], 0, 1), 1, 2);
  });
  CHECK((one - grouped.get("v").value.topRows(1)).norm() < 1e-12);
}

TEST_CASE("deformable sampling has exact gradients") {
  std::mt19937_64 rng(5);
  auto spec = std::make_shared<Graph<double>::DeformSpec>();
  spec->levels = {MapShape{2, 4, 5}, MapShape{2, 2, 3}};
  spec->level_scale = {{2.5, 2.0}, {1.5, 1.0}};
  spec->points = 2;
  spec->query_view = {0, 1, 1};
  std::uniform_real_distribution<double> u(0.2, 3.7);
  for (int i = 0; i < 3 * 2 * 2; ++i) spec->reference.push_back(u(rng));
  ParamStore<double> s;
  s.add("l0", random(40, 3, rng));
  s.add("l1", random(12, 3, rng));
  s.add("off", random(3, 2 * 2 * 2, rng, 0.3));
  s.add("w", random(3, 2 * 2, rng));
  const auto build = [&](Graph<double>& g, const std::vector<Var>& v) {
    return g.deformable_sample({v[0], v[1]}, v[2], v[3], spec);
  };
  CHECK(max_gradient_error(s, build) < 1e-5);

  // zero offsets sample the reference location exactly
  s.get("off").value.setZero();
  s.get("w").value.setZero();
  s.get("w").value(0, 0) = 1.0;
  const Md out = eval(s, build);
  const double ref_u = spec->reference[0], ref_v = spec->reference[1];
  const Eigen::VectorXd expect = geometry::bilinear_sample(s.get("l0").value.topRows(20), 4, 5, ref_u, ref_v);
  CHECK((out.row(0).transpose() - expect).norm() < 1e-12);
}

TEST_CASE("parameter store") {
  ParamStore<float> s;
  s.add("a", Matrix<float>::Ones(2, 3));
  CHECK(s.contains("a"));
  CHECK_FALSE(s.contains("b"));
  CHECK(s.total_size() == 6);
  CHECK_THROWS(s.add("a", Matrix<float>::Ones(1, 1)));
  const ParamStore<double> d = s.cast<double>();
  CHECK(d.get("a").value.sum() == 6.0);
}
