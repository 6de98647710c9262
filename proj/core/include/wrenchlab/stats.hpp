#pragma once

#include <cstdint>
#include <vector>

#include "wrenchlab/linalg.hpp"

namespace wrenchlab::stats {

// average ranks (1-based); tied values share the mean of their rank range
VecX average_ranks(const VecX& x);

double pearson(const VecX& x, const VecX& y);

// rank correlation with average ranks on ties; constant input gives 0
double spearman_rho(const VecX& x, const VecX& y);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // either input constant
};

// two-sided permutation test: p = (1 + #{|rho*| >= |rho|}) / (1 + n_perm)
SpearmanResult spearman(const VecX& x, const VecX& y, int n_permutations = 10000,
                        std::uint64_t seed = 0);

double median(std::vector<double> xs);

}  // namespace wrenchlab::stats
