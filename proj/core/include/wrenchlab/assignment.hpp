#pragma once

#include <vector>

#include "wrenchlab/linalg.hpp"

namespace wrenchlab::assign {

// minimum-cost perfect matching on a square cost matrix, O(n^3);
// returns perm with row i matched to column perm[i]
std::vector<int> solve_assignment(const MatX& cost);

double assignment_cost(const MatX& cost, const std::vector<int>& perm);

}  // namespace wrenchlab::assign
