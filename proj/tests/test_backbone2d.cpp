#include <doctest.h>

#include <random>

#include "omniseg/backbone2d.hpp"

using namespace omniseg;
using namespace omniseg::backbone2d;
using autodiff::Graph;
using autodiff::ParamStore;

namespace {

struct Net {
  BackboneConfig config;
  ParamStore<double> store;

  explicit Net(int width, std::uint64_t seed = 1) {
    config.width = width;
    ParamStore<float> f;
    nn::Initializer init(f, seed);
    register_params(init, config);
    store = f.cast<double>();
  }

  std::array<MatrixD, 4> run(const MatrixD& rgb, const MapShape& shape) {
    Graph<double> g(false);
    nn::Binder<double> bind(g, store);
    const FeaturePyramid p = forward(bind, config, g.constant(rgb), shape);
    std::array<MatrixD, 4> out;
    for (int s = 0; s < 4; ++s) out[s] = g.value(p.maps[s]);
    return out;
  }
};

MatrixD random_rgb(int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixD m(rows, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("pyramid shapes and channels") {
  Net net(4);
  Graph<double> g(false);
  nn::Binder<double> bind(g, net.store);
  const MapShape in{3, 64, 96};
  const FeaturePyramid p = forward(bind, net.config, g.constant(random_rgb(in.pixels(), 1)), in);
  for (int s = 0; s < 4; ++s) {
    CHECK(p.shapes[s].views == 3);
    CHECK(p.shapes[s].height == 64 / kStrides[s]);
    CHECK(p.shapes[s].width == 96 / kStrides[s]);
    CHECK(p.channels[s] == 4 << s);
    CHECK(g.rows(p.maps[s]) == p.shapes[s].pixels());
    CHECK(g.cols(p.maps[s]) == p.channels[s]);
  }
}

TEST_CASE("views are processed independently") {
  Net net(2);
  const MapShape one{1, 32, 64}, two{2, 32, 64};
  const MatrixD a = random_rgb(one.pixels(), 2), b = random_rgb(one.pixels(), 3);
  MatrixD both(two.pixels(), 3);
  both << a, b;
  const auto ra = net.run(a, one), rb = net.run(b, one), rab = net.run(both, two);
  for (int s = 0; s < 4; ++s) {
    const Eigen::Index n = ra[s].rows();
    CHECK((rab[s].topRows(n) - ra[s]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rab[s].bottomRows(n) - rb[s]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("translation equivariance away from the borders") {
  Net net(2);
  const int H = 96, W = 160, shift = 32;
  const MapShape in{1, H, W};
  const MatrixD a = random_rgb(in.pixels(), 4);
  MatrixD b = MatrixD::Zero(in.pixels(), 3);
  for (int y = 0; y < H; ++y) {
    for (int x = shift; x < W; ++x) b.row(y * W + x) = a.row(y * W + x - shift);
  }
  const auto ra = net.run(a, in), rb = net.run(b, in);
  // receptive fields: 23 px at stride 4 and 63 px at stride 8
  for (int s = 0; s < 2; ++s) {
    const int stride = kStrides[s], h = H / stride, w = W / stride, margin = 40;
    int compared = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (y * stride < margin || (y + 1) * stride + margin > H) continue;
        if (x * stride < margin || (x + 1) * stride + margin + shift > W) continue;
        const double diff = (rb[s].row(y * w + x + shift / stride) - ra[s].row(y * w + x)).cwiseAbs().maxCoeff();
        CHECK(diff < 1e-10);
        ++compared;
      }
    }
    CHECK(compared > 0);
  }
}

TEST_CASE("stage hook receives every stage") {
  Net net(2);
  Graph<double> g(false);
  nn::Binder<double> bind(g, net.store);
  const MapShape in{1, 32, 32};
  std::vector<int> stages;
  forward(bind, net.config, g.constant(random_rgb(in.pixels(), 5)), in, [&](int s, autodiff::Var m, const MapShape& shape) {
    stages.push_back(s);
    CHECK(shape.height == 32 / kStrides[s]);
    return m;
  });
  CHECK(stages == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("rgb normalization") {
  const std::vector<std::uint8_t> px{0, 255, 128};
  const MatrixD m = normalize_rgb({&px}, 1, 1);
  CHECK(m(0, 0) == doctest::Approx(-2.0));
  CHECK(m(0, 1) == doctest::Approx(2.0));
  CHECK(m(0, 2) == doctest::Approx((128 / 255.0 - 0.5) * 4));
}

TEST_CASE("image sizes must be multiples of 32") {
  Net net(2);
  Graph<double> g(false);
  nn::Binder<double> bind(g, net.store);
  const MapShape in{1, 40, 32};
  CHECK_THROWS_AS(forward(bind, net.config, g.constant(random_rgb(in.pixels(), 6)), in), ContractViolation);
}
