#pragma once

#include <utility>
#include <vector>

#include "omniseg/autodiff.hpp"

// Set-prediction training: bipartite matching of queries to ground-truth
// segments, the matched classification and mask losses, and the optimizer.
namespace omniseg::learn {

using autodiff::Graph;
using autodiff::ParamStore;
using autodiff::Var;

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double no_object = 0.1;  // class-loss weight of unmatched queries
};

/// A ground-truth segment over the mask token domain.
struct Segment {
  int class_id = 0;
  std::vector<char> mask;
};

struct Targets {
  std::vector<Segment> segments;
  std::vector<char> valid;  // tokens that take part in mask losses (empty = all)

  int valid_count(int tokens) const;
};

/// lambda_cls * -log p(class) + lambda_bce * mean BCE + lambda_dice * (1 - soft dice).
double pair_cost(const Eigen::Ref<const Eigen::RowVectorXd>& class_logits,
                 const Eigen::Ref<const Eigen::RowVectorXd>& mask_logits, const Segment& gt,
                 const std::vector<char>& valid, const LossWeights& weights);

/// queries x segments matrix of pair costs.
MatrixD cost_matrix(const MatrixD& class_logits, const MatrixD& mask_logits, const Targets& targets,
                    const LossWeights& weights);

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query, segment), ascending query
  std::vector<int> unmatched;              // queries without a segment
  double cost = 0.0;
};

/// Minimum-cost matching of min(Q, G) pairs. Among optimal matchings the one
/// whose pair list is lexicographically smallest is returned.
MatchResult hungarian_match(const MatrixD& cost);

/// Minimum total cost and the row -> column assignment (-1 when unassigned).
std::pair<double, std::vector<int>> solve_assignment(const MatrixD& cost);

struct LossTerms {
  double total = 0.0;
  double cls = 0.0;
  double bce = 0.0;
  double dice = 0.0;

  LossTerms& operator+=(const LossTerms& o) {
    total += o.total;
    cls += o.cls;
    bce += o.bce;
    dice += o.dice;
    return *this;
  }
};

/// Loss values for a given matching (no gradients).
LossTerms compute_losses(const MatrixD& class_logits, const MatrixD& mask_logits, const Targets& targets,
                         const MatchResult& match, const LossWeights& weights);

/// Matches on the current values and records the weighted loss as one graph
/// node; the matching is a constant for differentiation.
template <typename T>
Var set_loss(Graph<T>& g, Var class_logits, Var mask_logits, const Targets& targets, const LossWeights& weights,
             LossTerms* terms = nullptr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update from the accumulated gradients; returns the pre-clip gradient norm.
  double step(ParamStore<float>& params, double lr_scale = 1.0);
  long steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long step_ = 0;
  std::vector<Matrix<double>> m_;
  std::vector<Matrix<double>> v_;
};

}  // namespace omniseg::learn
