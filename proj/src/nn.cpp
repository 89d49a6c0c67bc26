#include "omniseg/nn.hpp"

#include <cmath>

namespace omniseg::nn {

void Initializer::normal(const std::string& name, int rows, int cols, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(dist(rng_));
  store_.add(name, std::move(m));
}

void Initializer::kaiming(const std::string& name, int rows, int cols, int fan_in) {
  normal(name, rows, cols, std::sqrt(2.0 / fan_in));
}

void Initializer::zeros(const std::string& name, int rows, int cols) {
  store_.add(name, Matrix<float>::Zero(rows, cols));
}

void Initializer::constant(const std::string& name, int rows, int cols, double value) {
  store_.add(name, Matrix<float>::Constant(rows, cols, static_cast<float>(value)));
}

void Initializer::linear(const std::string& prefix, int in, int out, bool zero) {
  if (zero) {
    zeros(prefix + ".w", in, out);
  } else {
    // fan-in scaling without the rectifier gain
    normal(prefix + ".w", in, out, std::sqrt(1.0 / in));
  }
  zeros(prefix + ".b", 1, out);
}

void Initializer::layer_norm(const std::string& prefix, int width) {
  constant(prefix + ".g", 1, width, 1.0);
  zeros(prefix + ".b", 1, width);
}

void Initializer::mlp(const std::string& prefix, int in, int hidden, int out, bool zero_last) {
  kaiming(prefix + ".0.w", in, hidden, in);
  zeros(prefix + ".0.b", 1, hidden);
  linear(prefix + ".1", hidden, out, zero_last);
}

template <typename T>
Var Binder<T>::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Var v = graph_.param(store_.get(name));
  bound_.emplace(name, v);
  return v;
}

template <typename T>
Var linear(Binder<T>& bind, Var x, const std::string& prefix) {
  return bind.graph().linear(x, bind(prefix + ".w"), bind(prefix + ".b"));
}

template <typename T>
Var layer_norm(Binder<T>& bind, Var x, const std::string& prefix) {
  return bind.graph().layer_norm(x, bind(prefix + ".g"), bind(prefix + ".b"));
}

template <typename T>
Var mlp(Binder<T>& bind, Var x, const std::string& prefix) {
  Var h = bind.graph().relu(linear(bind, x, prefix + ".0"));
  return linear(bind, h, prefix + ".1");
}

void randomize(ParamStore<float>& store, std::uint64_t seed, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& block : store.blocks()) {
    for (Eigen::Index i = 0; i < block->value.size(); ++i) block->value.data()[i] = static_cast<float>(dist(rng));
  }
}

void zero_blocks(ParamStore<float>& store, const std::string& suffix) {
  for (auto& block : store.blocks()) {
    const std::string& n = block->name;
    if (n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0) {
      block->value.setZero();
    }
  }
}

template class Binder<float>;
template class Binder<double>;
template Var linear(Binder<float>&, Var, const std::string&);
template Var linear(Binder<double>&, Var, const std::string&);
template Var layer_norm(Binder<float>&, Var, const std::string&);
template Var layer_norm(Binder<double>&, Var, const std::string&);
template Var mlp(Binder<float>&, Var, const std::string&);
template Var mlp(Binder<double>&, Var, const std::string&);

}  // namespace omniseg::nn
