#include "wrenchlab/sim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "wrenchlab/errors.hpp"

namespace wrenchlab::sim {

SimModel make_sim_model(const AirframeConfig& config, const SimParams& params) {
  config.validate();
  if (!(params.dt > 0.0)) throw ValidationError("dt must be positive");
  if (params.episode_length < 1) throw ValidationError("episode_length must be >= 1");
  SimModel model;
  model.config = config;
  model.f = build_allocation_matrix(config);
  model.inertia = point_mass_inertia(config);
  model.inertia_inv = model.inertia.inverse();
  model.params = params;
  return model;
}

namespace {

bool state_finite(const RigidBodyState& s) {
  return s.p.allFinite() && s.v.allFinite() && s.omega.allFinite() &&
         std::isfinite(s.q.w()) && s.q.vec().allFinite() &&
         (s.motor_thrusts.size() == 0 || s.motor_thrusts.allFinite());
}

}  // namespace

StepResult step(const SimModel& model, const RigidBodyState& state, const VecX& thrust_cmd) {
  const AirframeConfig& cfg = model.config;
  const SimParams& prm = model.params;
  if (thrust_cmd.size() != cfg.n_m()) throw ShapeMismatch("thrust command width mismatch");

  StepResult out;
  RigidBodyState& next = out.next;
  next = state;

  VecX u = thrust_cmd.cwiseMax(cfg.u_min).cwiseMin(cfg.u_max);
  if (prm.fidelity == Fidelity::high) {
    // first-order motor response, semi-implicit in the motor state
    VecX m = state.motor_thrusts.size() == cfg.n_m() ? state.motor_thrusts
                                                     : VecX::Constant(cfg.n_m(), 0.0);
    m += (prm.dt / prm.motor_time_constant) * (u - m);
    next.motor_thrusts = m;
    u = m.cwiseMax(cfg.u_min).cwiseMin(cfg.u_max);
  }

  const Vec6 wrench = model.f * u;
  const Mat3 rot = state.q.toRotationMatrix();
  const Vec3 accel = rot * wrench.head<3>() / cfg.mass + prm.gravity;
  const Vec3 omega_dot =
      model.inertia_inv * (wrench.tail<3>() - state.omega.cross(model.inertia * state.omega));

  next.v = state.v + prm.dt * accel;
  next.omega = state.omega + prm.dt * omega_dot;
  next.p = state.p + prm.dt * next.v;

  // qdot = 0.5 q (x) (0, omega), with the updated body rates
  const Eigen::Quaterniond omega_quat(0.0, next.omega.x(), next.omega.y(), next.omega.z());
  const Eigen::Quaterniond dq = state.q * omega_quat;
  next.q.w() = state.q.w() + 0.5 * prm.dt * dq.w();
  next.q.x() = state.q.x() + 0.5 * prm.dt * dq.x();
  next.q.y() = state.q.y() + 0.5 * prm.dt * dq.y();
  next.q.z() = state.q.z() + 0.5 * prm.dt * dq.z();
  next.q.normalize();

  if (!state_finite(next)) throw NonFiniteState("integration produced non-finite state");

  const double cos_tilt = next.q.toRotationMatrix()(2, 2);
  out.crashed = next.p.norm() > prm.crash_position_bound ||
                cos_tilt < std::cos(prm.crash_tilt_bound);
  return out;
}

VecX observe(const RigidBodyState& state, const Vec3& target_p, const SimParams& params,
             Rng* noise_rng) {
  VecX o(kObsDim);
  o.segment<3>(0) = target_p - state.p;
  o.segment<3>(3) = state.v;
  const Mat3 rot = state.q.toRotationMatrix();
  o.segment<3>(6) = rot.col(0);
  o.segment<3>(9) = rot.col(1);
  o.segment<3>(12) = state.omega;
  if (params.fidelity == Fidelity::high && noise_rng && params.sensor_noise_std.size() > 0) {
    if (params.sensor_noise_std.size() != kObsDim)
      throw ShapeMismatch("sensor noise vector must have 15 channels");
    for (int k = 0; k < kObsDim; ++k) o[k] += noise_rng->normal(0.0, params.sensor_noise_std[k]);
  }
  return o;
}

namespace {

double kernel_sum(double a, double b, const double* h, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a * std::exp(-b * h[i] * h[i]);
  return acc;
}

}  // namespace

double compute_reward(const RigidBodyState& state, const VecX& thrusts, const RewardConfig& rc,
                      const Vec3& target_p) {
  const Vec3 p_e = target_p - state.p;
  const double r_p = kernel_sum(rc.a_p, rc.b_p, p_e.data(), 3);
  if (rc.mode == RewardMode::position_only) return r_p;

  if (rc.hover_thrusts.size() != thrusts.size())
    throw ShapeMismatch("hover thrust vector width mismatch");
  const double r_v = kernel_sum(rc.a_v, rc.b_v, state.v.data(), 3);
  const double r_omega = kernel_sum(rc.a_omega, rc.b_omega, state.omega.data(), 3);
  const VecX du = thrusts - rc.hover_thrusts;
  const double r_u = kernel_sum(rc.a_u, rc.b_u, du.data(), static_cast<int>(du.size()));
  const Mat3 rot = state.q.toRotationMatrix();
  const double h_up = 1.0 - rot(2, 2);
  const double h_forw = 1.0 - rot(0, 0);
  const double r_up = kernel_sum(rc.a_up, rc.b_up, &h_up, 1);
  const double r_forw = kernel_sum(rc.a_forw, rc.b_forw, &h_forw, 1);
  return r_p * (r_forw + r_v + r_omega) + r_p + r_v + r_up + r_u;
}

double reward_upper_bound(const RewardConfig& rc, int n_m) {
  const double r_p = 3.0 * rc.a_p;
  if (rc.mode == RewardMode::position_only) return r_p;
  const double r_v = 3.0 * rc.a_v;
  const double r_omega = 3.0 * rc.a_omega;
  const double r_u = n_m * rc.a_u;
  return r_p * (rc.a_forw + r_v + r_omega) + r_p + r_v + rc.a_up + r_u;
}

RigidBodyState sample_initial_state(Rng& rng, const InitBounds& bounds) {
  RigidBodyState s;
  for (int k = 0; k < 3; ++k) s.p[k] = rng.uniform(-bounds.pos, bounds.pos);
  for (int k = 0; k < 3; ++k) s.v[k] = rng.uniform(-bounds.vel, bounds.vel);
  const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tilt = rng.uniform(0.0, bounds.tilt);
  const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec3 tilt_axis(std::cos(az), std::sin(az), 0.0);
  s.q = Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(tilt, tilt_axis);
  s.q.normalize();
  for (int k = 0; k < 3; ++k) s.omega[k] = rng.uniform(-bounds.omega, bounds.omega);
  return s;
}

RewardConfig make_reward_config(const AirframeConfig& config, RewardMode mode) {
  RewardConfig rc;
  rc.mode = mode;
  const FeasibilityResult feas = feasibility_check(config);
  if (!feas.feasible)
    throw ValidationError("airframe fails feasibility screen: " + feas.reason);
  rc.hover_thrusts = feas.hover_thrusts;
  return rc;
}

std::string trajectory_csv_header(int n_m) {
  std::string h = "env,step,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz";
  for (int i = 0; i < n_m; ++i) h += ",u" + std::to_string(i);
  h += ",reward\n";
  return h;
}

void append_trajectory_row(std::string& csv, int env, int step, const RigidBodyState& state,
                           const VecX& thrusts, double reward) {
  std::ostringstream ss;
  ss.precision(17);
  ss << env << ',' << step;
  for (int k = 0; k < 3; ++k) ss << ',' << state.p[k];
  for (int k = 0; k < 3; ++k) ss << ',' << state.v[k];
  ss << ',' << state.q.w() << ',' << state.q.x() << ',' << state.q.y() << ',' << state.q.z();
  for (int k = 0; k < 3; ++k) ss << ',' << state.omega[k];
  for (Eigen::Index k = 0; k < thrusts.size(); ++k) ss << ',' << thrusts[k];
  ss << ',' << reward << '\n';
  csv += ss.str();
}

}  // namespace wrenchlab::sim
