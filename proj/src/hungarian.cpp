#include "lgnet/hungarian.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace lgnet {

namespace {

// Rows <= cols. Row/column indices are 1-based internally; column 0 is the
// virtual source of each augmenting search.
std::vector<int> solve_wide(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return row_to_col;
}

}  // namespace

std::vector<std::pair<int, int>> hungarian_match(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("hungarian_match: non-finite cost");
  std::vector<std::pair<int, int>> pairs;
  if (cost.rows() == 0 || cost.cols() == 0) return pairs;
  if (cost.rows() <= cost.cols()) {
    const auto r2c = solve_wide(cost);
    for (std::size_t r = 0; r < r2c.size(); ++r) pairs.emplace_back(static_cast<int>(r), r2c[r]);
  } else {
    const Eigen::MatrixXd t = cost.transpose();
    const auto c2r = solve_wide(t);
    for (std::size_t c = 0; c < c2r.size(); ++c) pairs.emplace_back(c2r[c], static_cast<int>(c));
    std::sort(pairs.begin(), pairs.end());
  }
  return pairs;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<std::pair<int, int>>& pairs) {
  double total = 0.0;
  for (const auto& [r, c] : pairs) total += cost(r, c);
  return total;
}

}  // namespace lgnet
