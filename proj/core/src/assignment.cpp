#include "wrenchlab/assignment.hpp"

#include <limits>

#include "wrenchlab/errors.hpp"

namespace wrenchlab::assign {

// hungarian algorithm in the potentials formulation; rows and columns are
// 1-based internally with column 0 as the virtual start of the alternating path
std::vector<int> solve_assignment(const MatX& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != cost.rows()) throw ShapeMismatch("assignment cost matrix must be square");
  if (n == 0) return {};
  if (!cost.allFinite()) throw ValidationError("assignment cost matrix has non-finite entries");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);    // row matched to column j
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);  // previous column on the path

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
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

  std::vector<int> perm(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) perm[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return perm;
}

double assignment_cost(const MatX& cost, const std::vector<int>& perm) {
  if (static_cast<Eigen::Index>(perm.size()) != cost.rows())
    throw ShapeMismatch("permutation length does not match cost matrix");
  double acc = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i)
    acc += cost(static_cast<Eigen::Index>(i), perm[i]);
  return acc;
}

}  // namespace wrenchlab::assign
