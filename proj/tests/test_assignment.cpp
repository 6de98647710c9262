#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "wrenchlab/assignment.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/rng.hpp"

using namespace wrenchlab;

namespace {

double brute_force_cost(const MatX& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

bool is_permutation_of_columns(const std::vector<int>& perm) {
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != static_cast<int>(i)) return false;
  return true;
}

}  // namespace

TEST_CASE("hungarian matches brute force on all sizes up to six") {
  Rng rng(51);
  for (int n = 1; n <= 6; ++n) {
    for (int trial = 0; trial < 60; ++trial) {
      MatX cost(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cost(i, j) = rng.uniform(-5.0, 5.0);
      const auto perm = assign::solve_assignment(cost);
      REQUIRE(perm.size() == static_cast<std::size_t>(n));
      CHECK(is_permutation_of_columns(perm));
      CHECK(assign::assignment_cost(cost, perm) ==
            doctest::Approx(brute_force_cost(cost)).epsilon(1e-12));
    }
  }
}

TEST_CASE("optimal matching never loses to the identity") {
  Rng rng(52);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 8 + static_cast<int>(rng.uniform_index(25));
    MatX cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = rng.uniform(0.0, 10.0);
    const auto perm = assign::solve_assignment(cost);
    std::vector<int> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    CHECK(assign::assignment_cost(cost, perm) <=
          assign::assignment_cost(cost, identity) + 1e-12);
  }
}

TEST_CASE("structured costs produce the obvious matching") {
  // cost(i, j) = (i - j)^2 is minimized by the identity
  const int n = 12;
  MatX cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = static_cast<double>((i - j) * (i - j));
  const auto perm = assign::solve_assignment(cost);
  for (int i = 0; i < n; ++i) CHECK(perm[i] == i);

  // reversing one axis flips the matching
  MatX rev(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) rev(i, j) = cost(i, n - 1 - j);
  const auto flipped = assign::solve_assignment(rev);
  for (int i = 0; i < n; ++i) CHECK(flipped[i] == n - 1 - i);
}

TEST_CASE("degenerate and invalid inputs are handled") {
  MatX one(1, 1);
  one << 3.5;
  const auto perm = assign::solve_assignment(one);
  CHECK(perm == std::vector<int>{0});

  MatX rect(2, 3);
  rect.setZero();
  CHECK_THROWS_AS(assign::solve_assignment(rect), ShapeMismatch);

  MatX bad(2, 2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 1.0;
  CHECK_THROWS_AS(assign::solve_assignment(bad), ValidationError);

  MatX cost(3, 3);
  cost.setIdentity();
  CHECK_THROWS_AS(assign::assignment_cost(cost, std::vector<int>{0, 1}), ShapeMismatch);
}

TEST_CASE("ties still yield a valid optimal permutation") {
  MatX cost(4, 4);
  cost.setConstant(2.0);
  const auto perm = assign::solve_assignment(cost);
  CHECK(is_permutation_of_columns(perm));
  CHECK(assign::assignment_cost(cost, perm) == doctest::Approx(8.0));
}
