#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "wrenchlab/alloc.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/rng.hpp"

using namespace wrenchlab;

namespace {

double qp_objective(const AllocationMatrix& f, const Vec6& w, const VecX& u, double rho) {
  return u.squaredNorm() + rho * (f * u - w).squaredNorm();
}

// coarse grid over the 2d thrust box, refined twice around the best cell
double grid_search_objective(const AllocationMatrix& f, const Vec6& w, double u_min, double u_max,
                             double rho) {
  double lo0 = u_min, hi0 = u_max, lo1 = u_min, hi1 = u_max;
  double best = std::numeric_limits<double>::infinity();
  double b0 = 0.0, b1 = 0.0;
  for (int pass = 0; pass < 6; ++pass) {
    const int n = 60;
    const double s0 = (hi0 - lo0) / n, s1 = (hi1 - lo1) / n;
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; j <= n; ++j) {
        VecX u(2);
        u << lo0 + s0 * i, lo1 + s1 * j;
        const double obj = qp_objective(f, w, u, rho);
        if (obj < best) {
          best = obj;
          b0 = u[0];
          b1 = u[1];
        }
      }
    }
    lo0 = std::max(u_min, b0 - 2.0 * s0);
    hi0 = std::min(u_max, b0 + 2.0 * s0);
    lo1 = std::max(u_min, b1 - 2.0 * s1);
    hi1 = std::min(u_max, b1 + 2.0 * s1);
  }
  return best;
}

AllocationMatrix toy_two_motor() {
  AllocationMatrix f(6, 2);
  f << 1.0, 0.3,   // mixed force rows so both motors matter
      0.0, 0.7,
      0.9, 1.0,
      0.2, -0.4,
      -0.5, 0.1,
      0.05, -0.02;
  return f;
}

AirframeConfig perturbed_airframe(int n_m, Rng& rng) {
  AirframeConfig c = standard_airframe(n_m);
  for (auto& rotor : c.rotors) {
    rotor.t += Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.02, 0.02));
    const Vec3 axis =
        Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)).normalized();
    rotor.R = Eigen::AngleAxisd(rng.uniform(0.0, 0.3), axis).toRotationMatrix() * rotor.R;
  }
  return c;
}

}  // namespace

TEST_CASE("two motor qp matches a refined grid search") {
  const AllocationMatrix f = toy_two_motor();
  Rng rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    Vec6 w;
    for (int k = 0; k < 6; ++k) w[k] = rng.uniform(-4.0, 4.0);
    const double rho = trial % 2 == 0 ? 1.0 : 10.0;
    const auto sol = alloc::solve_allocation_qp(f, w, 0.0, 5.0, rho);
    REQUIRE(sol.u.size() == 2);
    CHECK(sol.u.minCoeff() >= 0.0);
    CHECK(sol.u.maxCoeff() <= 5.0);
    const double grid = grid_search_objective(f, w, 0.0, 5.0, rho);
    CHECK(qp_objective(f, w, sol.u, rho) <= grid + 1e-6);
  }
}

TEST_CASE("qp satisfies projected gradient optimality on random airframes") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const AirframeConfig c = perturbed_airframe(trial % 2 == 0 ? 4 : 6, rng);
    const AllocationMatrix f = build_allocation_matrix(c);
    Vec6 w;
    for (int k = 0; k < 6; ++k) w[k] = rng.uniform(-8.0, 8.0);
    const auto sol = alloc::solve_allocation_qp(f, w, c.u_min, c.u_max);
    REQUIRE(sol.converged);
    CHECK(sol.kkt_residual <= 1e-8);
    CHECK((sol.s - (f * sol.u - w)).norm() < 1e-12);

    // independent check of the fixed point condition
    const VecX grad = 2.0 * sol.u + 2.0 * f.transpose() * (f * sol.u - w);
    const VecX projected =
        (sol.u - grad).cwiseMax(c.u_min).cwiseMin(c.u_max);
    CHECK((sol.u - projected).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("batch solve reproduces the one shot solver") {
  Rng rng(43);
  const AirframeConfig c = standard_airframe(4);
  const AllocationMatrix f = build_allocation_matrix(c);
  std::vector<Vec6> targets;
  for (int i = 0; i < 50; ++i) {
    Vec6 w;
    for (int k = 0; k < 6; ++k) w[k] = rng.uniform(-6.0, 6.0);
    targets.push_back(w);
  }
  const auto batch = alloc::solve_allocation_qp_batch(f, targets, c.u_min, c.u_max);
  REQUIRE(batch.size() == targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto single = alloc::solve_allocation_qp(f, targets[i], c.u_min, c.u_max);
    CHECK((batch[i].u - single.u).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("pseudo inverse satisfies the moore penrose identities") {
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const AirframeConfig c = perturbed_airframe(trial % 2 == 0 ? 4 : 6, rng);
    const AllocationMatrix f = build_allocation_matrix(c);
    const MatX p = alloc::pseudo_inverse(f);
    REQUIRE(p.rows() == f.cols());
    REQUIRE(p.cols() == 6);
    CHECK((f * p * f - f).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p * f * p - p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(((f * p).transpose() - f * p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(((p * f).transpose() - p * f).cwiseAbs().maxCoeff() < 1e-10);

    Vec6 w;
    for (int k = 0; k < 6; ++k) w[k] = rng.uniform(-2.0, 2.0);
    CHECK((alloc::solve_unconstrained(f, w) - p * w).norm() < 1e-12);
  }
}

TEST_CASE("datasets are deterministic in the seed and carry provenance") {
  const AirframeConfig c = standard_airframe(4);
  const WrenchBox box = compute_wrench_box(c);
  const auto a = alloc::generate_dataset(c, box, alloc::AllocMode::unconstrained, 500, 9);
  const auto b = alloc::generate_dataset(c, box, alloc::AllocMode::unconstrained, 500, 9);
  const auto other = alloc::generate_dataset(c, box, alloc::AllocMode::unconstrained, 500, 10);
  CHECK((a.inputs - b.inputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.labels - b.labels).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.inputs - other.inputs).cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.config_hash == config_hash(c));
  CHECK(a.seed == 9);
  CHECK(a.mode == alloc::AllocMode::unconstrained);
}

TEST_CASE("dataset inputs cover the command cube and labels match their expert") {
  const AirframeConfig c = standard_airframe(4);
  const WrenchBox box = compute_wrench_box(c);
  const double range = c.u_max - c.u_min;

  const auto un = alloc::generate_dataset(c, box, alloc::AllocMode::unconstrained, 20'000, 5);
  CHECK(un.inputs.minCoeff() >= -1.0);
  CHECK(un.inputs.maxCoeff() <= 1.0);
  CHECK(un.inputs.colwise().mean().cwiseAbs().maxCoeff() < 0.02);

  const MatX pinv = alloc::pseudo_inverse(build_allocation_matrix(c));
  for (int i = 0; i < 200; ++i) {
    const Vec6 w = command_to_wrench(box, un.inputs.row(i).transpose());
    const VecX expected = pinv * w - VecX::Constant(4, c.u_min);
    CHECK((un.labels.row(i).transpose() * range - expected).cwiseAbs().maxCoeff() < 1e-10);
  }

  const auto con = alloc::generate_dataset(c, box, alloc::AllocMode::constrained, 2'000, 5);
  CHECK(con.labels.minCoeff() >= 0.0);
  CHECK(con.labels.maxCoeff() <= 1.0);
  CHECK(con.qp_failures == 0);
}

TEST_CASE("dataset files round trip bit exactly") {
  const AirframeConfig c = standard_airframe(4);
  const WrenchBox box = compute_wrench_box(c);
  const auto ds = alloc::generate_dataset(c, box, alloc::AllocMode::constrained, 300, 17);
  const auto path = std::filesystem::temp_directory_path() / "wl_test_dataset.bin";
  alloc::save_dataset(path, ds);
  const auto back = alloc::load_dataset(path);
  CHECK((back.inputs - ds.inputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.labels - ds.labels).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.config_hash == ds.config_hash);
  CHECK(back.seed == ds.seed);
  CHECK(back.mode == ds.mode);
  std::filesystem::remove(path);
}

TEST_CASE("unconstrained training recovers the pseudo inverse map") {
  // the expert is linear, the unconstrained net is linear, so training should
  // drive the composed map onto the expert almost exactly
  const AirframeConfig c = standard_airframe(4);
  const WrenchBox box = compute_wrench_box(c);
  const auto ds = alloc::generate_dataset(c, box, alloc::AllocMode::unconstrained, 4'000, 3);
  const auto res = alloc::train_allocation_net(ds, alloc::AllocMode::unconstrained, 3);

  REQUIRE(res.log.epochs >= 1);
  CHECK(res.log.val_loss.back() < 1e-10);

  const auto err = alloc::evaluate_allocation_error(res.model, c, box,
                                                    alloc::AllocMode::unconstrained, 5'000, 99);
  CHECK(err.mean_abs <= 1e-4);
  CHECK(err.max_abs <= 1e-3);

  // in normalized coordinates the composed linear map equals the expert's
  const double range = c.u_max - c.u_min;
  const MatX pinv = alloc::pseudo_inverse(build_allocation_matrix(c));
  MatX expert(4, 6), learned(4, 6);
  for (int k = 0; k < 6; ++k) {
    const Vec6 a = Vec6::Unit(k);
    const Vec6 a0 = Vec6::Zero();
    expert.col(k) = (pinv * (command_to_wrench(box, a) - command_to_wrench(box, a0))) / range;
    MatX x(2, 6);
    x.row(0) = a.transpose();
    x.row(1) = a0.transpose();
    const MatX y = nn::forward(res.model, x);
    learned.col(k) = (y.row(0) - y.row(1)).transpose();
  }
  CHECK((learned - expert).norm() <= 1e-3);
}

TEST_CASE("error report names the config and the sampling scope") {
  alloc::AllocError err{1.5e-3, 2.5e-4};
  const std::string j = alloc::error_report_json(0xabcdefull, alloc::AllocMode::constrained,
                                                 1000, err, 42);
  CHECK(j.find("constrained") != std::string::npos);
  CHECK(j.find("1000") != std::string::npos);
  CHECK(j.find("abcdef") != std::string::npos);
}
