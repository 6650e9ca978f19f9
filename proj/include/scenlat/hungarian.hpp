#pragma once

#include <vector>

namespace scenlat {

struct Assignment {
  std::vector<int> col_of_row;  // col_of_row[i] = column matched to row i
  double cost = 0.0;
};

// Minimum-cost perfect matching on a square n x n cost matrix (row-major),
// shortest augmenting paths with potentials, O(n^3).
Assignment solve_assignment(const std::vector<double>& cost, int n);

}  // namespace scenlat
