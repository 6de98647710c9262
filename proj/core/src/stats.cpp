#include "wrenchlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wrenchlab/errors.hpp"
#include "wrenchlab/rng.hpp"

namespace wrenchlab::stats {

VecX average_ranks(const VecX& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  VecX ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x[order[static_cast<std::size_t>(j + 1)]] ==
                            x[order[static_cast<std::size_t>(i)]])
      ++j;
    // positions i..j share the average of ranks i+1..j+1
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[static_cast<std::size_t>(k)]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const VecX& x, const VecX& y) {
  if (x.size() != y.size()) throw ShapeMismatch("correlation inputs differ in length");
  const Eigen::Index n = x.size();
  if (n < 2) throw InsufficientData("correlation needs at least two points");
  const double mx = x.mean();
  const double my = y.mean();
  const VecX dx = x.array() - mx;
  const VecX dy = y.array() - my;
  const double sx = dx.squaredNorm();
  const double sy = dy.squaredNorm();
  if (sx == 0.0 || sy == 0.0) return 0.0;  // constant input convention
  return dx.dot(dy) / std::sqrt(sx * sy);
}

double spearman_rho(const VecX& x, const VecX& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

SpearmanResult spearman(const VecX& x, const VecX& y, int n_permutations, std::uint64_t seed) {
  if (x.size() != y.size()) throw ShapeMismatch("correlation inputs differ in length");
  if (n_permutations < 1) throw ValidationError("need at least one permutation");
  const Eigen::Index n = x.size();
  if (n < 2) throw InsufficientData("correlation needs at least two points");

  SpearmanResult res;
  const VecX rx = average_ranks(x);
  const VecX ry = average_ranks(y);
  const bool cx = (rx.array() == rx[0]).all();
  const bool cy = (ry.array() == ry[0]).all();
  if (cx || cy) {
    res.degenerate = true;
    return res;  // rho 0, p 1 by convention
  }
  res.rho = pearson(rx, ry);

  // permute one rank vector; rho under the null is exchangeable
  Rng rng(mix_seed(seed, 0x7370726du));  // "sprm"
  VecX perm = ry;
  const double thresh = std::abs(res.rho);
  int hits = 0;
  for (int it = 0; it < n_permutations; ++it) {
    for (Eigen::Index i = n; i > 1; --i) {
      const Eigen::Index j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(i)));
      std::swap(perm[i - 1], perm[j]);
    }
    if (std::abs(pearson(rx, perm)) >= thresh) ++hits;
  }
  res.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + n_permutations);
  return res;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw InsufficientData("median of an empty set");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace wrenchlab::stats
