#include <doctest.h>

#include <cmath>
#include <vector>

#include "wrenchlab/rng.hpp"
#include "wrenchlab/stats.hpp"

using namespace wrenchlab;

namespace {

// quadratic-time ranks: 1 + count(smaller) + half the remaining ties
VecX slow_ranks(const VecX& x) {
  const Eigen::Index n = x.size();
  VecX r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int smaller = 0, equal = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (x[j] < x[i]) ++smaller;
      if (x[j] == x[i]) ++equal;
    }
    r[i] = smaller + 0.5 * (equal - 1) + 1.0;
  }
  return r;
}

double slow_spearman(const VecX& x, const VecX& y) {
  return stats::pearson(slow_ranks(x), slow_ranks(y));
}

}  // namespace

TEST_CASE("average ranks share tied positions") {
  VecX x(6);
  x << 3.0, 1.0, 4.0, 1.0, 5.0, 9.0;
  const VecX r = stats::average_ranks(x);
  VecX expected(6);
  expected << 3.0, 1.5, 4.0, 1.5, 5.0, 6.0;
  CHECK((r - expected).cwiseAbs().maxCoeff() < 1e-15);

  VecX all_tied = VecX::Constant(4, 7.0);
  CHECK((stats::average_ranks(all_tied) - VecX::Constant(4, 2.5)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("pearson hits the textbook endpoints") {
  VecX x(5);
  x << 1.0, 2.0, 3.0, 4.0, 5.0;
  CHECK(stats::pearson(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stats::pearson(x, (-x).eval()) == doctest::Approx(-1.0).epsilon(1e-12));

  VecX y(5);
  y << 2.0, 1.0, 4.0, 3.0, 5.0;
  // direct computation of the covariance form
  const double mx = x.mean(), my = y.mean();
  const double num = ((x.array() - mx) * (y.array() - my)).sum();
  const double den = std::sqrt((x.array() - mx).square().sum() * (y.array() - my).square().sum());
  CHECK(stats::pearson(x, y) == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("spearman rho agrees with the quadratic oracle") {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform_index(30));
    VecX x(n), y(n);
    for (int i = 0; i < n; ++i) {
      // coarse quantization forces plenty of ties
      x[i] = std::floor(rng.uniform(-3.0, 3.0));
      y[i] = std::floor(rng.uniform(-3.0, 3.0));
    }
    if (x.maxCoeff() == x.minCoeff() || y.maxCoeff() == y.minCoeff()) continue;
    CHECK(stats::spearman_rho(x, y) == doctest::Approx(slow_spearman(x, y)).epsilon(1e-10));
  }
}

TEST_CASE("spearman is invariant to monotone transforms") {
  Rng rng(62);
  VecX x(15), y(15);
  for (int i = 0; i < 15; ++i) {
    x[i] = rng.uniform(-2.0, 2.0);
    y[i] = x[i] + rng.uniform(-0.5, 0.5);
  }
  const double base = stats::spearman_rho(x, y);
  const VecX exp_x = x.array().exp().matrix();
  const VecX cube_y = y.array().cube().matrix();
  CHECK(stats::spearman_rho(exp_x, y) == doctest::Approx(base).epsilon(1e-12));
  CHECK(stats::spearman_rho(x, cube_y) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("permutation test flags a monotone relation") {
  VecX x(12), y(12);
  for (int i = 0; i < 12; ++i) {
    x[i] = i;
    y[i] = 2.0 * i + 1.0;
  }
  const auto res = stats::spearman(x, y, 10'000, 1);
  CHECK(res.rho == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(res.degenerate);
  CHECK(res.p_value <= 2e-3);
}

TEST_CASE("permutation p values stay calibrated under the null") {
  Rng rng(63);
  int rejections = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    VecX x(20), y(20);
    for (int i = 0; i < 20; ++i) {
      x[i] = rng.uniform(0.0, 1.0);
      y[i] = rng.uniform(0.0, 1.0);
    }
    const auto res = stats::spearman(x, y, 400, 1000 + t);
    if (res.p_value <= 0.05) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / trials;
  CHECK(rate >= 0.01);
  CHECK(rate <= 0.12);
}

TEST_CASE("constant inputs are reported degenerate") {
  VecX x = VecX::Constant(8, 2.0);
  VecX y(8);
  for (int i = 0; i < 8; ++i) y[i] = i;
  const auto res = stats::spearman(x, y, 500, 3);
  CHECK(res.degenerate);
  CHECK(res.rho == 0.0);
  CHECK(res.p_value == 1.0);
  CHECK(stats::spearman_rho(x, y) == 0.0);
}

TEST_CASE("spearman p values are reproducible for a fixed seed") {
  Rng rng(64);
  VecX x(10), y(10);
  for (int i = 0; i < 10; ++i) {
    x[i] = rng.uniform(0.0, 1.0);
    y[i] = rng.uniform(0.0, 1.0);
  }
  const auto a = stats::spearman(x, y, 2'000, 42);
  const auto b = stats::spearman(x, y, 2'000, 42);
  const auto c = stats::spearman(x, y, 2'000, 43);
  CHECK(a.p_value == b.p_value);
  CHECK(a.rho == c.rho);
}

TEST_CASE("median handles odd even and singleton inputs") {
  CHECK(stats::median({5.0}) == 5.0);
  CHECK(stats::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(stats::median({4.0, 1.0, 3.0, 2.0}) == doctest::Approx(2.5));
  const std::vector<double> xs{9.0, 7.0, 8.0};
  const std::vector<double> copy = xs;
  stats::median(xs);
  CHECK(xs == copy);
}
