#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wrenchlab/errors.hpp"
#include "wrenchlab/sim.hpp"

using namespace wrenchlab;

namespace {

sim::SimModel quad_model(sim::SimParams params = {}) {
  return sim::make_sim_model(standard_airframe(4), params);
}

Vec6 world_angular_momentum(const sim::SimModel& model, const sim::RigidBodyState& s) {
  Vec6 out = Vec6::Zero();
  out.head<3>() = s.q.toRotationMatrix() * (model.inertia * s.omega);
  return out;
}

}  // namespace

TEST_CASE("free fall integrates gravity exactly") {
  const sim::SimModel model = quad_model();
  sim::RigidBodyState s;
  const VecX zero = VecX::Zero(4);
  const double dt = model.params.dt;
  const double g = -kGravity;
  for (int k = 1; k <= 120; ++k) {
    s = sim::step(model, s, zero).next;
    CHECK(s.v.z() == doctest::Approx(g * dt * k).epsilon(1e-12));
    CHECK(s.v.head<2>().norm() == 0.0);
    // semi-implicit: position accumulates the updated velocities
    CHECK(s.p.z() == doctest::Approx(g * dt * dt * k * (k + 1) / 2.0).epsilon(1e-12));
    CHECK(s.omega.norm() == 0.0);
    CHECK(s.q.w() == 1.0);
  }
}

TEST_CASE("quaternion norm survives long tumbling") {
  const sim::SimModel model = quad_model();
  sim::RigidBodyState s;
  s.omega = Vec3(3.0, -2.0, 1.0);
  Rng rng(21);
  VecX u(4);
  for (int k = 0; k < 2000; ++k) {
    for (int i = 0; i < 4; ++i) u[i] = rng.uniform(0.0, 5.0);
    s = sim::step(model, s, u).next;
    CHECK(std::abs(s.q.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("torque free spin with spherical inertia conserves world angular momentum") {
  AirframeConfig cfg = standard_airframe(4);
  cfg.motor_mass = 0.0;
  cfg.body_inertia = 0.02 * Mat3::Identity();
  const sim::SimModel model = sim::make_sim_model(cfg, {});
  sim::RigidBodyState s;
  s.omega = Vec3(1.5, -0.7, 2.2);
  const Vec6 l0 = world_angular_momentum(model, s);
  const VecX zero = VecX::Zero(4);
  for (int k = 0; k < 300; ++k) s = sim::step(model, s, zero).next;
  CHECK((world_angular_momentum(model, s) - l0).norm() < 1e-10);
  CHECK((s.omega - Vec3(1.5, -0.7, 2.2)).norm() < 1e-12);
}

TEST_CASE("angular momentum drift shrinks with the step size") {
  // asymmetric inertia, first order integrator: halving dt should at least halve the drift
  auto drift = [](double dt) {
    sim::SimParams params;
    params.dt = dt;
    const sim::SimModel model = sim::make_sim_model(standard_airframe(4), params);
    sim::RigidBodyState s;
    s.omega = Vec3(2.0, -1.0, 0.5);
    const Vec6 l0 = world_angular_momentum(model, s);
    const VecX zero = VecX::Zero(4);
    const int steps = static_cast<int>(std::lround(1.0 / dt));
    for (int k = 0; k < steps; ++k) s = sim::step(model, s, zero).next;
    return (world_angular_momentum(model, s) - l0).norm();
  };
  const double coarse = drift(0.01);
  const double fine = drift(0.00125);
  CHECK(coarse > 0.0);
  CHECK(fine < 0.5 * coarse);
}

TEST_CASE("crash flags fire on position and tilt bounds") {
  const sim::SimModel model = quad_model();
  const VecX zero = VecX::Zero(4);

  sim::RigidBodyState out;
  out.p = Vec3(5.5, 0.0, 0.0);
  CHECK(sim::step(model, out, zero).crashed);

  sim::RigidBodyState inside;
  inside.p = Vec3(4.0, 0.0, 0.0);
  CHECK_FALSE(sim::step(model, inside, zero).crashed);

  sim::RigidBodyState tipped;
  tipped.q = Eigen::Quaterniond(Eigen::AngleAxisd(87.0 * std::numbers::pi / 180.0, Vec3::UnitX()));
  CHECK(sim::step(model, tipped, zero).crashed);

  sim::RigidBodyState leaning;
  leaning.q = Eigen::Quaterniond(Eigen::AngleAxisd(45.0 * std::numbers::pi / 180.0, Vec3::UnitX()));
  CHECK_FALSE(sim::step(model, leaning, zero).crashed);
}

TEST_CASE("thrust commands are clamped to the motor range") {
  const sim::SimModel model = quad_model();
  sim::RigidBodyState s;
  // commands far past u_max must act like u_max
  const VecX wild = VecX::Constant(4, 1e4);
  const VecX maxed = VecX::Constant(4, model.config.u_max);
  const auto a = sim::step(model, s, wild).next;
  const auto b = sim::step(model, s, maxed).next;
  CHECK((a.v - b.v).norm() == 0.0);
  const VecX below = VecX::Constant(4, -3.0);
  const auto c = sim::step(model, s, below).next;
  CHECK(c.v.z() == doctest::Approx(-kGravity * model.params.dt).epsilon(1e-12));
}

TEST_CASE("high fidelity motors follow a first order lag") {
  sim::SimParams params;
  params.fidelity = sim::Fidelity::high;
  const sim::SimModel model = quad_model(params);
  sim::RigidBodyState s;
  const double target = 3.0;
  const VecX cmd = VecX::Constant(4, target);
  const double beta = 1.0 - params.dt / params.motor_time_constant;
  for (int k = 1; k <= 50; ++k) {
    s = sim::step(model, s, cmd).next;
    const double expected = target * (1.0 - std::pow(beta, k));
    for (int i = 0; i < 4; ++i)
      CHECK(s.motor_thrusts[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("observation packs position error velocity attitude and rates") {
  sim::RigidBodyState s;
  s.p = Vec3(0.3, -0.2, 1.0);
  s.v = Vec3(0.5, 0.1, -0.4);
  s.omega = Vec3(0.2, 0.0, -0.1);
  s.q = Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Vec3(0.0, 1.0, 0.0)));
  const Vec3 target(1.0, 0.0, 1.5);
  const VecX o = sim::observe(s, target, {});
  REQUIRE(o.size() == sim::kObsDim);
  CHECK((o.segment<3>(0) - (target - s.p)).norm() < 1e-15);
  CHECK((o.segment<3>(3) - s.v).norm() < 1e-15);
  const Mat3 rot = s.q.toRotationMatrix();
  CHECK((o.segment<3>(6) - rot.col(0)).norm() < 1e-15);
  CHECK((o.segment<3>(9) - rot.col(1)).norm() < 1e-15);
  CHECK((o.segment<3>(12) - s.omega).norm() < 1e-15);
}

TEST_CASE("sensor noise only applies in high fidelity with a matching vector") {
  sim::RigidBodyState s;
  s.p = Vec3(0.1, 0.2, 0.3);

  sim::SimParams low;
  Rng rng_low(5);
  const VecX clean = sim::observe(s, Vec3::Zero(), low, &rng_low);
  CHECK((clean - sim::observe(s, Vec3::Zero(), low)).norm() == 0.0);

  sim::SimParams high;
  high.fidelity = sim::Fidelity::high;
  high.sensor_noise_std = VecX::Constant(sim::kObsDim, 0.01);
  Rng a(5), b(5), c(6);
  const VecX na = sim::observe(s, Vec3::Zero(), high, &a);
  const VecX nb = sim::observe(s, Vec3::Zero(), high, &b);
  const VecX nc = sim::observe(s, Vec3::Zero(), high, &c);
  CHECK((na - nb).norm() == 0.0);
  CHECK((na - nc).norm() > 0.0);
  CHECK((na - clean).norm() > 0.0);

  high.sensor_noise_std = VecX::Constant(3, 0.01);
  Rng d(5);
  CHECK_THROWS_AS(sim::observe(s, Vec3::Zero(), high, &d), ShapeMismatch);
}

TEST_CASE("reward kernels match the closed forms") {
  sim::RewardConfig rc;
  sim::RigidBodyState s;
  const VecX u = VecX::Zero(4);

  SUBCASE("position only sums one kernel per axis") {
    s.p = Vec3(1.0, 0.0, -0.5);
    const double expected = rc.a_p * (std::exp(-rc.b_p * 1.0) + 1.0 + std::exp(-rc.b_p * 0.25));
    CHECK(sim::compute_reward(s, u, rc) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(sim::compute_reward(sim::RigidBodyState{}, u, rc) ==
          doctest::Approx(3.0 * rc.a_p).epsilon(1e-14));
  }

  SUBCASE("full mode peaks at hover and matches the upper bound") {
    rc.mode = sim::RewardMode::full;
    rc.hover_thrusts = VecX::Constant(4, 2.4525);
    const double peak = sim::compute_reward(s, rc.hover_thrusts, rc);
    CHECK(peak == doctest::Approx(sim::reward_upper_bound(rc, 4)).epsilon(1e-14));
    // any deviation costs reward
    sim::RigidBodyState moved = s;
    moved.v = Vec3(1.0, 0.0, 0.0);
    CHECK(sim::compute_reward(moved, rc.hover_thrusts, rc) < peak);
    CHECK(sim::compute_reward(s, VecX::Zero(4), rc) < peak);
  }

  SUBCASE("full mode validates the hover vector width") {
    rc.mode = sim::RewardMode::full;
    rc.hover_thrusts = VecX::Constant(6, 1.0);
    CHECK_THROWS_AS(sim::compute_reward(s, u, rc), ShapeMismatch);
  }
}

TEST_CASE("reward config derives hover thrusts or rejects the airframe") {
  const auto rc = sim::make_reward_config(standard_airframe(4), sim::RewardMode::full);
  REQUIRE(rc.hover_thrusts.size() == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(rc.hover_thrusts[i] == doctest::Approx(kGravity / 4.0).epsilon(1e-3));

  AirframeConfig weak = standard_airframe(4);
  weak.u_max = 1.0;
  CHECK_THROWS_AS(sim::make_reward_config(weak, sim::RewardMode::full), ValidationError);
}

TEST_CASE("initial states respect the sampling bounds") {
  Rng rng(77);
  const sim::InitBounds bounds;
  double mean_px = 0.0, mean_tilt = 0.0;
  const int n = 10'000;
  for (int i = 0; i < n; ++i) {
    const auto s = sim::sample_initial_state(rng, bounds);
    CHECK(s.p.cwiseAbs().maxCoeff() <= bounds.pos);
    CHECK(s.v.cwiseAbs().maxCoeff() <= bounds.vel);
    CHECK(s.omega.cwiseAbs().maxCoeff() <= bounds.omega);
    const double cos_tilt = s.q.toRotationMatrix()(2, 2);
    CHECK(cos_tilt >= std::cos(bounds.tilt) - 1e-12);
    mean_px += s.p.x();
    mean_tilt += std::acos(std::min(1.0, cos_tilt));
  }
  CHECK(std::abs(mean_px / n) < 0.02);
  // tilt is uniform in angle, so the mean sits near half the bound
  CHECK(mean_tilt / n == doctest::Approx(bounds.tilt / 2.0).epsilon(0.1));
}

TEST_CASE("trajectory csv rows line up with the header") {
  const std::string header = sim::trajectory_csv_header(4);
  std::string csv = header;
  sim::RigidBodyState s;
  sim::append_trajectory_row(csv, 0, 3, s, VecX::Zero(4), 1.25);
  const auto count_fields = [](const std::string& line) {
    return 1 + static_cast<int>(std::count(line.begin(), line.end(), ','));
  };
  const auto first_nl = csv.find('\n');
  const std::string row = csv.substr(first_nl + 1, csv.find('\n', first_nl + 1) - first_nl - 1);
  CHECK(count_fields(header.substr(0, first_nl)) == count_fields(row));
  CHECK(row.substr(0, 4) == "0,3,");
}
