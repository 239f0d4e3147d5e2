#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace lgnet {

/// Minimum-cost bipartite matching (Kuhn-Munkres with potentials, O(n^2 m)).
/// Every row is matched when rows <= cols, otherwise every column is.
/// Returns (row, col) pairs sorted by row.
std::vector<std::pair<int, int>> hungarian_match(const Eigen::MatrixXd& cost);

/// Sum of cost over the given pairs.
double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<std::pair<int, int>>& pairs);

}  // namespace lgnet
