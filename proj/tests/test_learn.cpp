#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "omniseg/learn.hpp"
#include "oracles.hpp"

using namespace omniseg;
using namespace omniseg::learn;
using omniseg::testing::Brute;
using omniseg::testing::brute_force;

namespace {

double naive_pair_cost(const Eigen::RowVectorXd& cls, const Eigen::RowVectorXd& mask, const Segment& gt,
                       const LossWeights& w) {
  const double ce = -std::log(std::exp(cls(gt.class_id)) / cls.array().exp().sum());
  double bce = 0, inter = 0, ps = 0, gs = 0;
  for (Eigen::Index t = 0; t < mask.size(); ++t) {
    const double p = 1.0 / (1.0 + std::exp(-mask(t)));
    bce += gt.mask[t] ? -std::log(p) : -std::log(1 - p);
    inter += gt.mask[t] ? p : 0.0;
    ps += p;
    gs += gt.mask[t];
  }
  bce /= static_cast<double>(mask.size());
  const double dice = 1.0 - (2 * inter + 1) / (ps + gs + 1);
  return w.cls * ce + w.bce * bce + w.dice * dice;
}

Targets random_targets(std::mt19937_64& rng, int segments, int tokens, int classes) {
  Targets t;
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::bernoulli_distribution bit(0.4);
  for (int s = 0; s < segments; ++s) {
    Segment seg;
    seg.class_id = cls(rng);
    for (int i = 0; i < tokens; ++i) seg.mask.push_back(bit(rng));
    t.segments.push_back(seg);
  }
  return t;
}

MatrixD gaussian(std::mt19937_64& rng, int rows, int cols, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("hungarian matching equals exhaustive search, ties included") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 6), small(0, 3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int q = dim(rng), g = dim(rng);
    MatrixD c(q, g);
    const bool ties = trial % 2 == 0;
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = ties ? small(rng) : n(rng);
    const Brute b = brute_force(c);
    const MatchResult m = hungarian_match(c);
    CAPTURE(trial);
    CHECK(m.cost == doctest::Approx(b.cost).epsilon(1e-12));
    CHECK(m.pairs == b.pairs);
    CHECK(static_cast<int>(m.unmatched.size()) == q - static_cast<int>(m.pairs.size()));
    const auto [cost, assign] = solve_assignment(c);
    CHECK(cost == doctest::Approx(b.cost).epsilon(1e-12));
    double sum = 0;
    for (int r = 0; r < q; ++r) {
      if (assign[r] >= 0) sum += c(r, assign[r]);
    }
    CHECK(sum == doctest::Approx(cost).epsilon(1e-12));
  }
}

TEST_CASE("matching edge cases") {
  CHECK(hungarian_match(MatrixD(3, 0)).pairs.empty());
  CHECK(hungarian_match(MatrixD(3, 0)).unmatched == std::vector<int>{0, 1, 2});
  MatrixD c(2, 2);
  c << 1, 1, 1, 1;
  CHECK(hungarian_match(c).pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
}

TEST_CASE("pair cost equals the naive formula") {
  std::mt19937_64 rng(2);
  LossWeights w;
  for (int trial = 0; trial < 200; ++trial) {
    const Targets t = random_targets(rng, 1, 9, 4);
    const MatrixD cls = gaussian(rng, 1, 5, 2.0), mask = gaussian(rng, 1, 9, 3.0);
    CHECK(pair_cost(cls.row(0), mask.row(0), t.segments[0], {}, w) ==
          doctest::Approx(naive_pair_cost(cls.row(0), mask.row(0), t.segments[0], w)).epsilon(1e-10));
  }
  // tokens outside the valid set do not count
  Segment s{1, {1, 0, 1}};
  Eigen::RowVectorXd cls(3), mask(3), mask2(3);
  cls << 0.1, 0.2, 0.3;
  mask << 1.0, -2.0, 5.0;
  mask2 << 1.0, 40.0, 5.0;
  const std::vector<char> valid{1, 0, 1};
  CHECK(pair_cost(cls, mask, s, valid, w) == doctest::Approx(pair_cost(cls, mask2, s, valid, w)));
  CHECK(pair_cost(cls, mask, s, {}, w) != doctest::Approx(pair_cost(cls, mask2, s, {}, w)));
}

TEST_CASE("set loss does not depend on query or segment order") {
  std::mt19937_64 rng(3);
  LossWeights w;
  for (int trial = 0; trial < 50; ++trial) {
    const Targets t = random_targets(rng, 3, 12, 4);
    const MatrixD cls = gaussian(rng, 5, 5), mask = gaussian(rng, 5, 12, 2.0);
    const double ref = compute_losses(cls, mask, t, hungarian_match(cost_matrix(cls, mask, t, w)), w).total;

    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixD pc(5, 5), pm(5, 12);
    for (int i = 0; i < 5; ++i) {
      pc.row(i) = cls.row(perm[i]);
      pm.row(i) = mask.row(perm[i]);
    }
    CHECK(compute_losses(pc, pm, t, hungarian_match(cost_matrix(pc, pm, t, w)), w).total == doctest::Approx(ref));

    Targets rt = t;
    std::reverse(rt.segments.begin(), rt.segments.end());
    CHECK(compute_losses(cls, mask, rt, hungarian_match(cost_matrix(cls, mask, rt, w)), w).total ==
          doctest::Approx(ref));
  }
}

TEST_CASE("unmatched queries learn the no-object class at reduced weight") {
  MatrixD cls(2, 3), mask = MatrixD::Zero(2, 2);
  cls << 1, 2, 3, 0, 0, 0;
  Targets none;
  LossWeights w;
  const LossTerms t = compute_losses(cls, mask, none, hungarian_match(MatrixD(2, 0)), w);
  const double ce0 = -(3 - std::log(std::exp(1) + std::exp(2) + std::exp(3)));
  const double ce1 = std::log(3.0);
  CHECK(t.cls == doctest::Approx((0.1 * ce0 + 0.1 * ce1) / 0.2));
  CHECK(t.bce == 0.0);
  CHECK(t.dice == 0.0);
  CHECK(t.total == doctest::Approx(2.0 * t.cls));
}

TEST_CASE("set loss gradient matches finite differences") {
  std::mt19937_64 rng(4);
  LossWeights w;
  const Targets t = random_targets(rng, 2, 10, 4);
  MatrixD cls = gaussian(rng, 4, 5), mask = gaussian(rng, 4, 10, 2.0);
  autodiff::Graph<double> g;
  const Var c = g.constant(cls), m = g.constant(mask);
  LossTerms terms;
  const Var loss = set_loss(g, c, m, t, w, &terms);
  CHECK(g.value(loss)(0, 0) == doctest::Approx(terms.total));
  g.backward(loss);
  const auto value = [&](const MatrixD& a, const MatrixD& b) {
    return compute_losses(a, b, t, hungarian_match(cost_matrix(a, b, t, w)), w).total;
  };
  const double h = 1e-6;
  for (int which = 0; which < 2; ++which) {
    MatrixD& x = which == 0 ? cls : mask;
    const MatrixD grad = g.grad(which == 0 ? c : m);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + h;
      const double up = value(cls, mask);
      x.data()[i] = keep - h;
      const double down = value(cls, mask);
      x.data()[i] = keep;
      CHECK(grad.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("set loss rejects mismatched domains") {
  autodiff::Graph<double> g;
  Targets t;
  t.segments.push_back({1, {1, 0}});
  CHECK_THROWS_AS(set_loss(g, g.constant(MatrixD::Zero(2, 3)), g.constant(MatrixD::Zero(2, 3)), t, LossWeights{}),
                  ContractViolation);
}

TEST_CASE("adam") {
  ParamStore<float> store;
  auto& p = store.add("p", Matrix<float>::Zero(1, 3));
  p.grad = Matrix<float>(1, 3);
  p.grad << 0.3f, -0.2f, 0.0f;
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.clip_norm = 0.0;
  Adam adam(cfg);
  const double norm = adam.step(store);
  CHECK(norm == doctest::Approx(std::sqrt(0.13)));
  // the first bias-corrected step moves every coordinate by lr against its sign
  CHECK(p.value(0, 0) == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(p.value(0, 1) == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(p.value(0, 2) == 0.0f);
  CHECK(adam.steps() == 1);

  SUBCASE("clipping rescales the gradient before the moments") {
    ParamStore<float> a, b;
    a.add("x", Matrix<float>::Zero(1, 2)).grad = Matrix<float>::Constant(1, 2, 30.0f);
    b.add("x", Matrix<float>::Zero(1, 2)).grad = Matrix<float>::Constant(1, 2, static_cast<float>(std::sqrt(0.5)));
    AdamConfig clipped, plain;
    clipped.clip_norm = 1.0;
    plain.clip_norm = 0.0;
    Adam ca(clipped), cb(plain);
    CHECK(ca.step(a) == doctest::Approx(30.0 * std::sqrt(2.0)));
    cb.step(b);
    a.get("x").grad.setConstant(0.5f);
    b.get("x").grad.setConstant(0.5f);
    ca.step(a);
    cb.step(b);
    CHECK((a.get("x").value - b.get("x").value).cwiseAbs().maxCoeff() < 1e-6f);
  }
  SUBCASE("the parameter set may not change") {
    store.add("q", Matrix<float>::Zero(1, 1)).grad = Matrix<float>::Zero(1, 1);
    CHECK_THROWS_AS(adam.step(store), ContractViolation);
  }
}
