#include <cmath>

#include "omniseg/learn.hpp"

namespace omniseg::learn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + exp(x)) without overflow
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Eigen::RowVectorXd log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

struct MaskTerms {
  double bce = 0.0;
  double dice = 0.0;
};

MaskTerms mask_terms(const Eigen::Ref<const Eigen::RowVectorXd>& logits, const std::vector<char>& gt,
                     const std::vector<char>& valid) {
  double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
  int n = 0;
  for (Eigen::Index t = 0; t < logits.size(); ++t) {
    if (!valid.empty() && !valid[t]) continue;
    const double m = logits(t);
    const double gv = gt[t] ? 1.0 : 0.0;
    bce += softplus(m) - gv * m;
    const double p = sigmoid(m);
    inter += p * gv;
    psum += p;
    gsum += gv;
    ++n;
  }
  MaskTerms out;
  out.bce = n > 0 ? bce / n : 0.0;
  out.dice = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
  return out;
}

}  // namespace

int Targets::valid_count(int tokens) const {
  if (valid.empty()) return tokens;
  int n = 0;
  for (char v : valid) n += v ? 1 : 0;
  return n;
}

double pair_cost(const Eigen::Ref<const Eigen::RowVectorXd>& class_logits,
                 const Eigen::Ref<const Eigen::RowVectorXd>& mask_logits, const Segment& gt,
                 const std::vector<char>& valid, const LossWeights& weights) {
  require(static_cast<Eigen::Index>(gt.mask.size()) == mask_logits.size(), "pair_cost: mask domains differ");
  require(gt.class_id >= 0 && gt.class_id < class_logits.size(), "pair_cost: class out of range");
  const double ce = -log_softmax(class_logits)(gt.class_id);
  const MaskTerms m = mask_terms(mask_logits, gt.mask, valid);
  return weights.cls * ce + weights.bce * m.bce + weights.dice * m.dice;
}

MatrixD cost_matrix(const MatrixD& class_logits, const MatrixD& mask_logits, const Targets& targets,
                    const LossWeights& weights) {
  MatrixD c(class_logits.rows(), static_cast<Eigen::Index>(targets.segments.size()));
  for (Eigen::Index q = 0; q < c.rows(); ++q) {
    for (Eigen::Index s = 0; s < c.cols(); ++s) {
      c(q, s) = pair_cost(class_logits.row(q), mask_logits.row(q), targets.segments[s], targets.valid, weights);
    }
  }
  return c;
}

LossTerms compute_losses(const MatrixD& class_logits, const MatrixD& mask_logits, const Targets& targets,
                         const MatchResult& match, const LossWeights& weights) {
  const int queries = static_cast<int>(class_logits.rows());
  const int no_object = static_cast<int>(class_logits.cols()) - 1;
  std::vector<int> target(queries, no_object);
  for (const auto& [q, s] : match.pairs) target[q] = targets.segments[s].class_id;
  double ce = 0.0, wsum = 0.0;
  for (int q = 0; q < queries; ++q) {
    const double w = target[q] == no_object ? weights.no_object : 1.0;
    ce += w * -log_softmax(class_logits.row(q))(target[q]);
    wsum += w;
  }
  LossTerms t;
  t.cls = wsum > 0.0 ? ce / wsum : 0.0;
  for (const auto& [q, s] : match.pairs) {
    const MaskTerms m = mask_terms(mask_logits.row(q), targets.segments[s].mask, targets.valid);
    t.bce += m.bce;
    t.dice += m.dice;
  }
  if (!match.pairs.empty()) {
    t.bce /= static_cast<double>(match.pairs.size());
    t.dice /= static_cast<double>(match.pairs.size());
  }
  t.total = weights.cls * t.cls + weights.bce * t.bce + weights.dice * t.dice;
  return t;
}

template <typename T>
Var set_loss(Graph<T>& g, Var class_logits, Var mask_logits, const Targets& targets, const LossWeights& weights,
             LossTerms* terms) {
  const MatrixD cls = g.value(class_logits).template cast<double>();
  const MatrixD mask = g.value(mask_logits).template cast<double>();
  require(cls.rows() == mask.rows(), "set_loss: query count mismatch");
  for (const auto& s : targets.segments) {
    require(static_cast<Eigen::Index>(s.mask.size()) == mask.cols(), "set_loss: segment mask domain mismatch");
  }
  require(targets.valid.empty() || static_cast<Eigen::Index>(targets.valid.size()) == mask.cols(),
          "set_loss: valid mask domain mismatch");
  const MatchResult match = hungarian_match(cost_matrix(cls, mask, targets, weights));
  const LossTerms values = compute_losses(cls, mask, targets, match, weights);
  if (terms) *terms = values;

  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(values.total);
  return g.custom(std::move(out), [&g, class_logits, mask_logits, targets, weights, match, cls, mask](const Matrix<T>& grad) {
    const double scale = static_cast<double>(grad(0, 0));
    const int queries = static_cast<int>(cls.rows());
    const int no_object = static_cast<int>(cls.cols()) - 1;
    std::vector<int> target(queries, no_object);
    for (const auto& [q, s] : match.pairs) target[q] = targets.segments[s].class_id;
    double wsum = 0.0;
    for (int q = 0; q < queries; ++q) wsum += target[q] == no_object ? weights.no_object : 1.0;

    MatrixD gc = MatrixD::Zero(cls.rows(), cls.cols());
    if (wsum > 0.0) {
      for (int q = 0; q < queries; ++q) {
        const double w = (target[q] == no_object ? weights.no_object : 1.0) / wsum;
        Eigen::RowVectorXd p = cls.row(q).array() - cls.row(q).maxCoeff();
        p = p.array().exp();
        p /= p.sum();
        p(target[q]) -= 1.0;
        gc.row(q) = weights.cls * w * p;
      }
    }
    MatrixD gm = MatrixD::Zero(mask.rows(), mask.cols());
    const double pairs = static_cast<double>(match.pairs.size());
    const int n = targets.valid_count(static_cast<int>(mask.cols()));
    for (const auto& [q, s] : match.pairs) {
      const auto& gt = targets.segments[s].mask;
      double inter = 0.0, psum = 0.0, gsum = 0.0;
      for (Eigen::Index t = 0; t < mask.cols(); ++t) {
        if (!targets.valid.empty() && !targets.valid[t]) continue;
        const double p = sigmoid(mask(q, t));
        inter += p * (gt[t] ? 1.0 : 0.0);
        psum += p;
        gsum += gt[t] ? 1.0 : 0.0;
      }
      const double a = 2.0 * inter + 1.0;
      const double b = psum + gsum + 1.0;
      for (Eigen::Index t = 0; t < mask.cols(); ++t) {
        if (!targets.valid.empty() && !targets.valid[t]) continue;
        const double gv = gt[t] ? 1.0 : 0.0;
        const double p = sigmoid(mask(q, t));
        const double dbce = n > 0 ? (p - gv) / n : 0.0;
        const double ddice_dp = -(2.0 * gv * b - a) / (b * b);
        gm(q, t) = (weights.bce * dbce + weights.dice * ddice_dp * p * (1.0 - p)) / pairs;
      }
    }
    g.grad(class_logits) += (scale * gc).template cast<T>();
    g.grad(mask_logits) += (scale * gm).template cast<T>();
  });
}

template Var set_loss(Graph<float>&, Var, Var, const Targets&, const LossWeights&, LossTerms*);
template Var set_loss(Graph<double>&, Var, Var, const Targets&, const LossWeights&, LossTerms*);

}  // namespace omniseg::learn
