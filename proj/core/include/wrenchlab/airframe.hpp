#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wrenchlab/linalg.hpp"

namespace wrenchlab {

// single rotor: mounting point, orientation, spin direction
struct RotorSpec {
  Vec3 t = Vec3::Zero();        // position in body frame, m
  Mat3 R = Mat3::Identity();    // rotor orientation in body frame
  double alpha = 1.0;           // spin direction, +1 or -1
};

struct AirframeConfig {
  std::vector<RotorSpec> rotors;  // 4 or 6
  double mass = 1.0;              // kg, total
  double c_t = 2e-6;              // thrust coefficient, N s^2 (u = c_t * omega^2)
  double c_q = 0.016;             // torque-to-thrust ratio, m
  double u_min = 0.0;             // N
  double u_max = 5.0;             // N
  double motor_mass = 0.05;       // kg, per motor, for the point-mass inertia
  Mat3 body_inertia = Mat3::Zero();  // kg m^2, central body contribution

  int n_m() const { return static_cast<int>(rotors.size()); }

  // throws ValidationError on any broken invariant
  void validate() const;
};

// columns map unit motor thrust to body wrench [force; torque]
using AllocationMatrix = Eigen::Matrix<double, 6, Eigen::Dynamic>;

// principal-component-aligned enclosing box of the admissible wrench set
struct WrenchBox {
  Mat6 basis = Mat6::Identity();       // columns are box axes in the wrench frame
  Vec6 center = Vec6::Zero();          // box center, wrench frame
  Vec6 half_extents = Vec6::Zero();    // per-axis half ranges, floored at eps_box
};

struct FeasibilityResult {
  bool feasible = false;
  VecX hover_thrusts;  // filled when feasible
  std::string reason;  // filled when not
};

AllocationMatrix build_allocation_matrix(const AirframeConfig& config);

// body + sum of motor point masses via the parallel axis theorem
Mat3 point_mass_inertia(const AirframeConfig& config);

// images of all 2^n_m thrust-box corners; their hull is the admissible set
std::vector<Vec6> admissible_wrench_corners(const AirframeConfig& config);

// PCA box over the corner images; throws DegenerateSet if all corners coincide
WrenchBox compute_wrench_box(const AirframeConfig& config);

// fraction of an axis half-extent that is just the degeneracy floor
Eigen::Array<bool, 6, 1> floored_axes(const WrenchBox& box);

// a in [-1,1]^6 (clamped) -> wrench; inverse is exact on non-floored axes
Vec6 command_to_wrench(const WrenchBox& box, const Vec6& a);
Vec6 wrench_to_command(const WrenchBox& box, const Vec6& w);

// hover reachability (attitude found by fixed point on the thrust direction,
// identity first) plus two-sided torque authority with force rows free
FeasibilityResult feasibility_check(const AirframeConfig& config, double tau_auth = 0.05);

// json schema: {rotors:[{t:[3], r:[9 row-major], alpha}], mass, c_t, c_q,
//               u_min, u_max, motor_mass, body_inertia:[9 row-major]}
std::string config_to_json(const AirframeConfig& config);
AirframeConfig config_from_json(const std::string& text);
void save_config(const std::filesystem::path& path, const AirframeConfig& config);
AirframeConfig load_config(const std::filesystem::path& path);

// content hash over the canonical binary field order; stable across platforms
std::uint64_t config_hash(const AirframeConfig& config);

// planar reference airframes: evenly spaced azimuths, alternating spin signs
AirframeConfig standard_airframe(int n_m, double arm_length = 0.17);

}  // namespace wrenchlab
