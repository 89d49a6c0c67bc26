#include <cmath>
#include <limits>

#include "omniseg/learn.hpp"

namespace omniseg::learn {

namespace {

// Shortest augmenting path with potentials; requires rows <= cols.
std::vector<int> assign_rows(const MatrixD& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

std::pair<double, std::vector<int>> solve_assignment(const MatrixD& cost) {
  const int q = static_cast<int>(cost.rows());
  const int g = static_cast<int>(cost.cols());
  std::vector<int> row_to_col(q, -1);
  if (q == 0 || g == 0) return {0.0, row_to_col};
  if (q <= g) {
    row_to_col = assign_rows(cost);
  } else {
    const MatrixD t = cost.transpose();
    const std::vector<int> col_to_row = assign_rows(t);
    for (int c = 0; c < g; ++c) row_to_col[col_to_row[c]] = c;
  }
  double total = 0.0;
  for (int r = 0; r < q; ++r) {
    if (row_to_col[r] >= 0) total += cost(r, row_to_col[r]);
  }
  return {total, row_to_col};
}

MatchResult hungarian_match(const MatrixD& cost) {
  require(cost.allFinite(), "hungarian_match: cost matrix has non-finite entries");
  const int q = static_cast<int>(cost.rows());
  const int g = static_cast<int>(cost.cols());
  MatchResult result;
  const double optimum = solve_assignment(cost).first;
  const double tol = 1e-9 * std::max(1.0, std::abs(optimum));

  // Fix pairs greedily in lexicographic order while an optimal completion exists.
  std::vector<char> row_open(q, 1), col_open(g, 1);
  double fixed = 0.0;
  int needed = std::min(q, g);
  const auto completion = [&](int from_row) {
    std::vector<int> rows, cols;
    for (int r = from_row; r < q; ++r) {
      if (row_open[r]) rows.push_back(r);
    }
    for (int c = 0; c < g; ++c) {
      if (col_open[c]) cols.push_back(c);
    }
    if (static_cast<int>(std::min(rows.size(), cols.size())) != needed) return std::numeric_limits<double>::infinity();
    MatrixD sub(rows.size(), cols.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      for (size_t j = 0; j < cols.size(); ++j) sub(i, j) = cost(rows[i], cols[j]);
    }
    return solve_assignment(sub).first;
  };
  for (int r = 0; r < q; ++r) {
    bool matched = false;
    if (needed > 0) {
      row_open[r] = 0;
      for (int c = 0; c < g && !matched; ++c) {
        if (!col_open[c]) continue;
        col_open[c] = 0;
        --needed;
        if (std::abs(fixed + cost(r, c) + completion(r + 1) - optimum) <= tol) {
          fixed += cost(r, c);
          result.pairs.emplace_back(r, c);
          matched = true;
        } else {
          col_open[c] = 1;
          ++needed;
        }
      }
    }
    if (!matched) result.unmatched.push_back(r);
  }
  require(static_cast<int>(result.pairs.size()) == std::min(q, g), "hungarian_match: greedy completion failed");
  result.cost = fixed;
  return result;
}

}  // namespace omniseg::learn
