#include <cmath>

#include "omniseg/learn.hpp"

namespace omniseg::learn {

double Adam::step(ParamStore<float>& params, double lr_scale) {
  auto& blocks = params.blocks();
  if (m_.empty()) {
    for (const auto& b : blocks) {
      m_.push_back(Matrix<double>::Zero(b->value.rows(), b->value.cols()));
      v_.push_back(Matrix<double>::Zero(b->value.rows(), b->value.cols()));
    }
  }
  require(m_.size() == blocks.size(), "adam: parameter set changed between steps");
  double sq = 0.0;
  for (const auto& b : blocks) sq += b->grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;

  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const double lr = config_.lr * lr_scale;
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& b = *blocks[i];
    const Matrix<double> g = b.grad.template cast<double>() * clip;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const Matrix<double> update =
        ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps)).matrix() * lr;
    b.value -= update.cast<float>();
  }
  return norm;
}

}  // namespace omniseg::learn
