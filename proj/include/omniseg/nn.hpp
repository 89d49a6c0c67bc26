#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>

#include "omniseg/autodiff.hpp"

// Parameter registration and the small layers shared by every model part.
// Parameters are registered once in a float store; forward code is templated
// so the same graph can be built in double precision for gradient checks.
namespace omniseg::nn {

using autodiff::Graph;
using autodiff::MapShape;
using autodiff::ParamStore;
using autodiff::Var;

class Initializer {
 public:
  Initializer(ParamStore<float>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  /// Gaussian with std sqrt(2 / fan_in).
  void kaiming(const std::string& name, int rows, int cols, int fan_in);
  void normal(const std::string& name, int rows, int cols, double sigma);
  void zeros(const std::string& name, int rows, int cols);
  void constant(const std::string& name, int rows, int cols, double value);

  /// Linear layer `prefix.w` (in x out) and `prefix.b` (1 x out).
  void linear(const std::string& prefix, int in, int out, bool zero = false);
  void layer_norm(const std::string& prefix, int width);
  /// Two linear layers with a rectifier between them.
  void mlp(const std::string& prefix, int in, int hidden, int out, bool zero_last = false);

  ParamStore<float>& store() { return store_; }

 private:
  ParamStore<float>& store_;
  std::mt19937_64 rng_;
};

/// Resolves parameter names to graph nodes, binding each block at most once per graph.
template <typename T>
class Binder {
 public:
  Binder(Graph<T>& graph, ParamStore<T>& store) : graph_(graph), store_(store) {}

  Var operator()(const std::string& name);
  bool has(const std::string& name) const { return store_.contains(name); }
  Graph<T>& graph() { return graph_; }
  ParamStore<T>& store() { return store_; }

 private:
  Graph<T>& graph_;
  ParamStore<T>& store_;
  std::unordered_map<std::string, Var> bound_;
};

template <typename T>
Var linear(Binder<T>& bind, Var x, const std::string& prefix);
template <typename T>
Var layer_norm(Binder<T>& bind, Var x, const std::string& prefix);
template <typename T>
Var mlp(Binder<T>& bind, Var x, const std::string& prefix);

/// Overwrites every block with N(0, sigma^2) noise (tests and gradient checks).
void randomize(ParamStore<float>& store, std::uint64_t seed, double sigma);

/// Zeroes every block whose name ends with `suffix`.
void zero_blocks(ParamStore<float>& store, const std::string& suffix);

template <typename T>
Matrix<T> to_matrix(const MatrixD& m) {
  return m.cast<T>();
}

}  // namespace omniseg::nn
