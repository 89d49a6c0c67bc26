#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace omniseg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD = Matrix<double>;

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when on-disk data is malformed or violates an invariant.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

/// Row-compressed sparse weights: output row r = sum_i weight[i] * input[index[i]]
/// for i in [offsets[r], offsets[r+1]).
struct SparseRows {
  int cols = 0;
  std::vector<int> offsets{0};
  std::vector<int> index;
  std::vector<double> weight;

  int rows() const { return static_cast<int>(offsets.size()) - 1; }
  void push(int col, double w) {
    index.push_back(col);
    weight.push_back(w);
  }
  void end_row() { offsets.push_back(static_cast<int>(index.size())); }

  /// Dense application to a row-major feature matrix.
  MatrixD apply(const MatrixD& input) const;
  /// Transpose of the weights, as another SparseRows.
  SparseRows transposed() const;
};

/// Number of worker threads honoring OMNISEG_THREADS (defaults to hardware).
int worker_threads();

/// Runs fn(i) for i in [0, n) across worker_threads() threads.
void parallel_for(int n, const std::function<void(int)>& fn);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& text);

/// Derives an independent stream seed from a base seed and a tag.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace omniseg
