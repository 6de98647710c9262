#include <doctest.h>

#include <cmath>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/rng.hpp"

using namespace wrenchlab;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

AirframeConfig random_config(int n_m, Rng& rng) {
  AirframeConfig c = standard_airframe(n_m);
  for (auto& rotor : c.rotors) {
    rotor.t = Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.1, 0.1));
    const Vec3 axis =
        Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)).normalized();
    rotor.R = Eigen::AngleAxisd(rng.uniform(0.0, 0.5), axis).toRotationMatrix();
  }
  return c;
}

AirframeConfig tilted_quad(double angle) {
  AirframeConfig c = standard_airframe(4);
  for (auto& rotor : c.rotors) {
    const Vec3 radial = rotor.t.normalized();
    const Vec3 tangential = Vec3::UnitZ().cross(radial);
    rotor.R = Eigen::AngleAxisd(angle, tangential).toRotationMatrix();
  }
  return c;
}

}  // namespace

TEST_CASE("allocation matrix columns match the per-rotor formula") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const AirframeConfig c = random_config(trial % 2 == 0 ? 4 : 6, rng);
    const AllocationMatrix f = build_allocation_matrix(c);
    REQUIRE(f.cols() == c.n_m());
    for (int i = 0; i < c.n_m(); ++i) {
      const auto& rotor = c.rotors[static_cast<std::size_t>(i)];
      const Vec3 axis = rotor.R * Vec3::UnitZ();
      const Vec3 force = axis;
      const Vec3 torque = rotor.t.cross(axis) + rotor.alpha * c.c_q * axis;
      CHECK((f.col(i).head(3) - force).norm() < 1e-12);
      CHECK((f.col(i).tail(3) - torque).norm() < 1e-12);
    }
  }
}

TEST_CASE("common body rotation transforms the allocation matrix blockwise") {
  Rng rng(102);
  for (int trial = 0; trial < 50; ++trial) {
    const AirframeConfig c = random_config(4, rng);
    const Vec3 axis =
        Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)).normalized();
    const Mat3 q = Eigen::AngleAxisd(rng.uniform(0.0, 3.0), axis).toRotationMatrix();

    AirframeConfig rotated = c;
    for (auto& rotor : rotated.rotors) {
      rotor.t = q * rotor.t;
      rotor.R = q * rotor.R;
    }
    const AllocationMatrix f = build_allocation_matrix(c);
    const AllocationMatrix g = build_allocation_matrix(rotated);
    Mat6 block = Mat6::Zero();
    block.topLeftCorner(3, 3) = q;
    block.bottomRightCorner(3, 3) = q;
    CHECK((g - block * f).norm() < 1e-9);
  }
}

TEST_CASE("point mass inertia is symmetric psd and matches a hand case") {
  Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const AirframeConfig c = random_config(4, rng);
    const Mat3 inertia = point_mass_inertia(c);
    CHECK((inertia - inertia.transpose()).norm() < 1e-12);
    const Eigen::SelfAdjointEigenSolver<Mat3> es(inertia);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  }

  // one motor of mass m at (l, 0, 0) adds m l^2 about y and z, nothing about x
  AirframeConfig c = standard_airframe(4);
  c.body_inertia = Mat3::Zero();
  c.rotors.resize(1);
  c.rotors[0].t = Vec3(0.2, 0.0, 0.0);
  const Mat3 inertia = point_mass_inertia(c);
  const double expected = c.motor_mass * 0.2 * 0.2;
  CHECK(inertia(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(inertia(1, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(inertia(2, 2) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(inertia(0, 1)) + std::abs(inertia(0, 2)) + std::abs(inertia(1, 2)) < 1e-15);
}

TEST_CASE("wrench box contains the image of random feasible thrusts") {
  Rng rng(104);
  for (int cfg_trial = 0; cfg_trial < 5; ++cfg_trial) {
    const AirframeConfig c = cfg_trial == 0 ? standard_airframe(4) : random_config(4, rng);
    const AllocationMatrix f = build_allocation_matrix(c);
    const WrenchBox box = compute_wrench_box(c);
    for (int i = 0; i < 2000; ++i) {
      VecX u(c.n_m());
      for (int k = 0; k < c.n_m(); ++k) u[k] = rng.uniform(c.u_min, c.u_max);
      const Vec6 proj = box.basis.transpose() * (f * u - box.center);
      for (int k = 0; k < 6; ++k) CHECK(std::abs(proj[k]) <= box.half_extents[k] + 1e-9);
    }
  }
}

TEST_CASE("command mapping round trips and hits box corners") {
  const AirframeConfig c = standard_airframe(4);
  const WrenchBox box = compute_wrench_box(c);
  const auto floored = floored_axes(box);

  CHECK((command_to_wrench(box, Vec6::Zero()) - box.center).norm() < 1e-12);
  for (int k = 0; k < 6; ++k) {
    const Vec6 w = command_to_wrench(box, Vec6::Unit(k));
    const Vec6 expected = box.center + box.basis.col(k) * box.half_extents[k];
    CHECK((w - expected).norm() < 1e-12);
  }

  Rng rng(105);
  for (int i = 0; i < 200; ++i) {
    Vec6 a;
    for (int k = 0; k < 6; ++k) a[k] = rng.uniform(-1.0, 1.0);
    const Vec6 back = wrench_to_command(box, command_to_wrench(box, a));
    for (int k = 0; k < 6; ++k)
      if (!floored[k]) CHECK(back[k] == doctest::Approx(a[k]).epsilon(1e-9));
  }
}

TEST_CASE("corner commands enclose every admissible wrench corner") {
  Rng rng(106);
  for (int cfg_trial = 0; cfg_trial < 4; ++cfg_trial) {
    const AirframeConfig c = cfg_trial == 0 ? standard_airframe(6) : random_config(4, rng);
    const WrenchBox box = compute_wrench_box(c);
    for (const Vec6& w : admissible_wrench_corners(c)) {
      const Vec6 proj = box.basis.transpose() * (w - box.center);
      for (int k = 0; k < 6; ++k) CHECK(std::abs(proj[k]) <= box.half_extents[k] + 1e-9);
    }
  }
}

TEST_CASE("feasibility accepts hovering airframes and rejects broken ones") {
  const AirframeConfig quad = standard_airframe(4);
  const auto ok = feasibility_check(quad);
  REQUIRE(ok.feasible);
  const double per_motor = quad.mass * kGravity / 4.0;
  for (int i = 0; i < 4; ++i) CHECK(ok.hover_thrusts[i] == doctest::Approx(per_motor).epsilon(1e-3));

  CHECK(feasibility_check(standard_airframe(6)).feasible);

  // the paper's benchmark shape: all rotors tilted outward, hover is attitude-tilted
  CHECK(feasibility_check(tilted_quad(10.0 * kDeg)).feasible);

  AirframeConfig weak = quad;
  weak.u_max = 0.8 * weak.mass * kGravity / 4.0;
  const auto under = feasibility_check(weak);
  CHECK_FALSE(under.feasible);
  CHECK(under.reason == "hover wrench unreachable");

  AirframeConfig one_sided = quad;
  for (auto& rotor : one_sided.rotors) rotor.alpha = 1.0;
  const auto spin = feasibility_check(one_sided);
  CHECK_FALSE(spin.feasible);
  CHECK(spin.reason.find("yaw") != std::string::npos);
}

TEST_CASE("config json round trips exactly and hashes are field sensitive") {
  Rng rng(107);
  const AirframeConfig c = random_config(6, rng);
  const AirframeConfig back = config_from_json(config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.mass == c.mass);
  CHECK(back.rotors[3].t == c.rotors[3].t);
  CHECK(back.rotors[5].R == c.rotors[5].R);

  AirframeConfig tweaked = c;
  tweaked.rotors[0].t.x() += 1e-9;
  CHECK(config_hash(tweaked) != config_hash(c));
  tweaked = c;
  tweaked.c_q *= 1.0 + 1e-12;
  CHECK(config_hash(tweaked) != config_hash(c));
}

TEST_CASE("config validation rejects malformed inputs") {
  AirframeConfig c = standard_airframe(4);
  c.rotors.resize(3);
  CHECK_THROWS_AS(c.validate(), ValidationError);

  c = standard_airframe(4);
  c.mass = -1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  c = standard_airframe(4);
  c.u_max = c.u_min;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  c = standard_airframe(4);
  c.rotors[2].alpha = 0.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
