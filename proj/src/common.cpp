#include "omniseg/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace omniseg {

MatrixD SparseRows::apply(const MatrixD& input) const {
  require(input.rows() == cols, "SparseRows::apply: input has " + std::to_string(input.rows()) +
                                    " rows, expected " + std::to_string(cols));
  MatrixD out = MatrixD::Zero(rows(), input.cols());
  for (int r = 0; r < rows(); ++r) {
    for (int i = offsets[r]; i < offsets[r + 1]; ++i) {
      out.row(r) += weight[i] * input.row(index[i]);
    }
  }
  return out;
}

SparseRows SparseRows::transposed() const {
  SparseRows t;
  t.cols = rows();
  std::vector<int> counts(cols, 0);
  for (int c : index) ++counts[c];
  t.offsets.assign(cols + 1, 0);
  for (int c = 0; c < cols; ++c) t.offsets[c + 1] = t.offsets[c] + counts[c];
  t.index.resize(index.size());
  t.weight.resize(weight.size());
  std::vector<int> cursor(t.offsets.begin(), t.offsets.end() - 1);
  for (int r = 0; r < rows(); ++r) {
    for (int i = offsets[r]; i < offsets[r + 1]; ++i) {
      const int slot = cursor[index[i]]++;
      t.index[slot] = r;
      t.weight[slot] = weight[i];
    }
  }
  return t;
}

int worker_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("OMNISEG_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace omniseg
