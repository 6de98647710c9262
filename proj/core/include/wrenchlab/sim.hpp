#pragma once

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/linalg.hpp"
#include "wrenchlab/rng.hpp"

namespace wrenchlab::sim {

enum class Fidelity : std::uint8_t { low = 0, high = 1 };

struct RigidBodyState {
  Vec3 p = Vec3::Zero();                               // m, world
  Vec3 v = Vec3::Zero();                               // m/s, world
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();  // world <- body
  Vec3 omega = Vec3::Zero();                           // rad/s, body
  VecX motor_thrusts;                                  // N, high fidelity motor state
};

struct SimParams {
  double dt = 0.01;                 // s
  Fidelity fidelity = Fidelity::low;
  double motor_time_constant = 0.05;  // s, high fidelity
  VecX sensor_noise_std;            // per observation channel, high fidelity
  Vec3 gravity = Vec3(0.0, 0.0, -kGravity);
  int episode_length = 300;         // steps
  double crash_position_bound = 5.0;   // m
  double crash_tilt_bound = 85.0 * std::numbers::pi / 180.0;  // rad
};

enum class RewardMode : std::uint8_t { full = 0, position_only = 1 };

// exponential kernels a*exp(-b*h^2) per tracked quantity
struct RewardConfig {
  double a_p = 1.0, b_p = 2.0;        // position, 1/m^2
  double a_v = 1.0, b_v = 0.3;        // velocity
  double a_omega = 1.0, b_omega = 0.3;
  double a_u = 0.25, b_u = 8.0;       // thrust-from-hover, 1/N^2
  double a_up = 1.0, b_up = 5.0;      // body z vs world z
  double a_forw = 1.0, b_forw = 5.0;  // body x vs world x
  RewardMode mode = RewardMode::position_only;
  VecX hover_thrusts;                 // N, per motor
};

// per-config quantities the stepper needs, derived once
struct SimModel {
  AirframeConfig config;
  AllocationMatrix f;
  Mat3 inertia;
  Mat3 inertia_inv;
  SimParams params;
};

SimModel make_sim_model(const AirframeConfig& config, const SimParams& params);

struct StepResult {
  RigidBodyState next;
  bool crashed = false;
};

// semi-implicit euler: accelerations from the current state update the
// velocities, the new velocities update position and attitude
StepResult step(const SimModel& model, const RigidBodyState& state, const VecX& thrust_cmd);

// o = [p_err, v, first two rotation columns, omega], 15 channels;
// rng adds per-channel sensor noise in high fidelity when provided
VecX observe(const RigidBodyState& state, const Vec3& target_p, const SimParams& params,
             Rng* noise_rng = nullptr);

inline constexpr int kObsDim = 15;

double compute_reward(const RigidBodyState& state, const VecX& thrusts,
                      const RewardConfig& rc, const Vec3& target_p = Vec3::Zero());

// largest possible reward, all kernels at peak
double reward_upper_bound(const RewardConfig& rc, int n_m);

struct InitBounds {
  double pos = 0.5;         // m per axis
  double vel = 0.2;         // m/s per axis
  double tilt = 10.0 * std::numbers::pi / 180.0;  // rad
  double omega = 0.2;       // rad/s per axis
};

RigidBodyState sample_initial_state(Rng& rng, const InitBounds& bounds);

// hover thrusts from the feasibility screen; throws ValidationError if infeasible
RewardConfig make_reward_config(const AirframeConfig& config, RewardMode mode);

// trajectory dump rows: env, step, state, command, reward
std::string trajectory_csv_header(int n_m);
void append_trajectory_row(std::string& csv, int env, int step, const RigidBodyState& state,
                           const VecX& thrusts, double reward);

}  // namespace wrenchlab::sim
