#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "omniseg/common.hpp"

// Tape-based reverse-mode differentiation over row-major matrices.
//
// Every value is a 2D matrix. Multi-view feature maps are stored channels-last
// as (views * height * width) x channels, view-major then row-major, which
// lets the 2D and 3D stages share one token layout.
namespace omniseg::autodiff {

struct MapShape {
  int views = 1;
  int height = 1;
  int width = 1;
  int pixels() const { return views * height * width; }
  int pixels_per_view() const { return height * width; }
  bool operator==(const MapShape&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Named parameter blocks in registration order. Addresses are stable.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Matrix<T> value);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::unique_ptr<Parameter<T>>>& blocks() { return blocks_; }
  const std::vector<std::unique_ptr<Parameter<T>>>& blocks() const { return blocks_; }
  long total_size() const;
  void zero_grad();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& b : blocks_) out.add(b->name, b->value.template cast<U>());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> blocks_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
 public:
  using M = Matrix<T>;
  using Backward = std::function<void(const M& grad_out)>;

  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(M value);
  Var param(Parameter<T>& p);
  /// Records an op whose gradient is supplied by `backward` (called with dL/d(output)).
  Var custom(M value, Backward backward);

  const M& value(Var v) const { return nodes_[v.id].value; }
  int rows(Var v) const { return static_cast<int>(nodes_[v.id].value.rows()); }
  int cols(Var v) const { return static_cast<int>(nodes_[v.id].value.cols()); }
  /// Gradient accumulator of a node (allocated on first access).
  M& grad(Var v);
  bool has_grad(Var v) const { return nodes_[v.id].grad.size() > 0; }

  /// Seeds dL/dL = 1 on a 1x1 node and propagates to all parameters.
  void backward(Var loss);

  Var matmul(Var a, Var b);     // a b
  Var matmul_nt(Var a, Var b);  // a b^T
  Var linear(Var x, Var w, Var b);  // x w + b (b is 1 x out, optional)
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var add_row(Var a, Var row);  // broadcast a 1 x C row
  Var mul_row(Var a, Var row);
  Var relu(Var a);
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5));
  Var softmax_rows(Var a);
  Var sum_all(Var a);
  Var sparse_mix(std::shared_ptr<const SparseRows> weights, Var x);
  /// out = base with out[rows[i]] = values[i].
  Var scatter_rows(Var base, std::shared_ptr<const std::vector<int>> rows, Var values);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, int start, int count);
  /// Repeats a 1 x C row `n` times.
  Var broadcast_row(Var row, int n);

  /// x is in.pixels() x Cin; w is (k*k*Cin) x Cout with rows ordered (ky, kx, cin).
  Var conv2d(Var x, MapShape in, Var w, Var b, int kernel, int stride, int pad, MapShape* out);

  /// Multi-head scaled dot-product attention of every query over every key.
  Var attention(Var q, Var k, Var v, int heads);
  /// Query i attends over key/value rows [i*group, (i+1)*group).
  Var grouped_attention(Var q, Var k, Var v, int group, int heads);

  /// Multi-level bilinear sampling. For query n, level l, point p the sample
  /// location (in level-l pixel units) is reference(n, l) + offset(n, l, p) * level_scale(l).
  /// `offsets` is N x (L*P*2) as (u, v) pairs, `weights` is N x (L*P); the
  /// output row n is sum over (l, p) of weight * sample(level l, view of n).
  struct DeformSpec {
    std::vector<MapShape> levels;
    std::vector<std::array<double, 2>> level_scale;  // (u, v) scale per level
    std::vector<int> query_view;                     // N
    std::vector<double> reference;                   // N * L * 2
    int points = 1;
  };
  Var deformable_sample(const std::vector<Var>& level_values, Var offsets, Var weights,
                        std::shared_ptr<const DeformSpec> spec);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    M value;
    M grad;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  Var push(M value, Backward backward = nullptr);
  void accumulate(Var v, const M& g);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace omniseg::autodiff
