#include "wrenchlab/airframe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "wrenchlab/alloc.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"

namespace wrenchlab {

namespace {

const Vec3 kThrustAxis = Vec3::UnitZ();  // thrust direction in motor frame

bool finite(const double* p, int n) {
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace

void AirframeConfig::validate() const {
  const int n = n_m();
  if (n != 4 && n != 6) throw ValidationError("rotor count must be 4 or 6, got " + std::to_string(n));
  if (!(u_min >= 0.0) || !(u_min < u_max))
    throw ValidationError("thrust bounds must satisfy 0 <= u_min < u_max");
  if (!(mass > 0.0)) throw ValidationError("mass must be positive");
  if (!(motor_mass > 0.0)) throw ValidationError("motor_mass must be positive");
  if (!(c_t > 0.0)) throw ValidationError("c_t must be positive");
  if (!(c_q >= 0.0)) throw ValidationError("c_q must be non-negative");
  if (!finite(body_inertia.data(), 9)) throw ValidationError("body_inertia has non-finite entries");
  for (int i = 0; i < n; ++i) {
    const RotorSpec& r = rotors[static_cast<std::size_t>(i)];
    if (!finite(r.t.data(), 3) || !finite(r.R.data(), 9))
      throw ValidationError("rotor " + std::to_string(i) + " has non-finite entries");
    const Mat3 err = r.R.transpose() * r.R - Mat3::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-9)
      throw ValidationError("rotor " + std::to_string(i) + " rotation is not orthonormal");
    if (std::abs(r.R.determinant() - 1.0) > 1e-9)
      throw ValidationError("rotor " + std::to_string(i) + " rotation has det != 1");
    if (r.alpha != 1.0 && r.alpha != -1.0)
      throw ValidationError("rotor " + std::to_string(i) + " spin direction must be +1 or -1");
  }
  const Mat3 j = point_mass_inertia(*this);
  if ((j - j.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError("derived inertia is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> es(j);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw ValidationError("derived inertia is not positive definite");
}

AllocationMatrix build_allocation_matrix(const AirframeConfig& config) {
  const int n = config.n_m();
  AllocationMatrix f(6, n);
  for (int i = 0; i < n; ++i) {
    const RotorSpec& r = config.rotors[static_cast<std::size_t>(i)];
    const Vec3 axis = r.R * kThrustAxis;
    f.col(i).head<3>() = axis;
    f.col(i).tail<3>() = r.t.cross(axis) - r.alpha * config.c_q * axis;
  }
  return f;
}

Mat3 point_mass_inertia(const AirframeConfig& config) {
  Mat3 j = config.body_inertia;
  for (const RotorSpec& r : config.rotors)
    j += config.motor_mass * (r.t.squaredNorm() * Mat3::Identity() - r.t * r.t.transpose());
  return j;
}

std::vector<Vec6> admissible_wrench_corners(const AirframeConfig& config) {
  const int n = config.n_m();
  const AllocationMatrix f = build_allocation_matrix(config);
  std::vector<Vec6> corners;
  corners.reserve(std::size_t{1} << n);
  VecX u(n);
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    for (int i = 0; i < n; ++i)
      u[i] = (mask >> i) & 1u ? config.u_max : config.u_min;
    corners.push_back(f * u);
  }
  return corners;
}

namespace {

// flip so the largest-magnitude entry is positive; lowest index wins magnitude ties
void normalize_sign(Eigen::Ref<Vec6> v) {
  int best = 0;
  for (int k = 1; k < 6; ++k)
    if (std::abs(v[k]) > std::abs(v[best]) + 1e-12) best = k;
  if (v[best] < 0.0) v = -v;
}

bool lex_less(const Vec6& a, const Vec6& b) {
  for (int k = 0; k < 6; ++k) {
    if (std::abs(a[k] - b[k]) > 1e-12) return a[k] < b[k];
  }
  return false;
}

}  // namespace

WrenchBox compute_wrench_box(const AirframeConfig& config) {
  const std::vector<Vec6> corners = admissible_wrench_corners(config);
  const auto n = static_cast<double>(corners.size());

  Vec6 mean = Vec6::Zero();
  for (const Vec6& c : corners) mean += c;
  mean /= n;

  Vec6 spread_lo = corners.front(), spread_hi = corners.front();
  Mat6 cov = Mat6::Zero();
  for (const Vec6& c : corners) {
    const Vec6 d = c - mean;
    cov += d * d.transpose();
    spread_lo = spread_lo.cwiseMin(c);
    spread_hi = spread_hi.cwiseMax(c);
  }
  cov /= n;
  if ((spread_hi - spread_lo).maxCoeff() == 0.0)
    throw DegenerateSet("all wrench corners coincide");

  Eigen::SelfAdjointEigenSolver<Mat6> es(cov);
  if (es.info() != Eigen::Success) throw Error("wrench box eigendecomposition failed");

  // descending eigenvalues; equal-eigenvalue groups ordered by their vectors
  Mat6 vecs = es.eigenvectors();
  Vec6 vals = es.eigenvalues();
  for (int k = 0; k < 6; ++k) normalize_sign(vecs.col(k));
  std::array<int, 6> order{0, 1, 2, 3, 4, 5};
  const double tie = 1e-12 * std::max(1.0, vals.maxCoeff());
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (std::abs(vals[a] - vals[b]) > tie) return vals[a] > vals[b];
    return lex_less(vecs.col(a), vecs.col(b));
  });

  WrenchBox box;
  for (int k = 0; k < 6; ++k) box.basis.col(k) = vecs.col(order[k]);

  Vec6 lo = Vec6::Constant(std::numeric_limits<double>::infinity());
  Vec6 hi = -lo;
  for (const Vec6& c : corners) {
    const Vec6 proj = box.basis.transpose() * c;
    lo = lo.cwiseMin(proj);
    hi = hi.cwiseMax(proj);
  }
  box.center = box.basis * (0.5 * (lo + hi));
  box.half_extents = 0.5 * (hi - lo);
  const double eps_box = 1e-6 * box.half_extents.maxCoeff();
  box.half_extents = box.half_extents.cwiseMax(eps_box);
  return box;
}

Eigen::Array<bool, 6, 1> floored_axes(const WrenchBox& box) {
  const double eps_box = 1e-6 * box.half_extents.maxCoeff();
  return box.half_extents.array() <= eps_box * (1.0 + 1e-9);
}

Vec6 command_to_wrench(const WrenchBox& box, const Vec6& a) {
  const Vec6 clamped = a.cwiseMax(-1.0).cwiseMin(1.0);
  return box.center + box.basis * clamped.cwiseProduct(box.half_extents);
}

Vec6 wrench_to_command(const WrenchBox& box, const Vec6& w) {
  return (box.basis.transpose() * (w - box.center)).cwiseQuotient(box.half_extents);
}

FeasibilityResult feasibility_check(const AirframeConfig& config, double tau_auth) {
  const AllocationMatrix f = build_allocation_matrix(config);
  const double weight = config.mass * kGravity;
  // large slack weight so the residual reflects reachability, not effort
  const double rho = 1e6;

  FeasibilityResult result;

  // hover needs thrust of magnitude m g at zero torque, in whatever direction
  // the airframe can sustain (it hovers at the matching attitude); fixed-point
  // iteration on the force direction, starting at body z so planar frames keep
  // the symmetric identity-attitude solution
  Vec3 dir = Vec3::UnitZ();
  alloc::AllocationSolution hover;
  double resid = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 30; ++iter) {
    Vec6 w = Vec6::Zero();
    w.head(3) = weight * dir;
    hover = alloc::solve_allocation_qp(f, w, config.u_min, config.u_max, rho);
    resid = (f * hover.u - w).norm();
    if (resid <= 0.02 * weight) break;
    const Vec3 achieved = (f * hover.u).head(3);
    if (achieved.norm() < 1e-12 * weight) break;
    const Vec3 next = achieved.normalized();
    if ((next - dir).norm() < 1e-12) break;
    dir = next;
  }
  if (resid > 0.02 * weight) {
    result.reason = "hover wrench unreachable";
    return result;
  }
  result.hover_thrusts = hover.u;

  // torque authority as transient capability: force rows free, torque exact
  AllocationMatrix f_tau = f;
  f_tau.topRows(3).setZero();
  static const char* axis_names[3] = {"roll", "pitch", "yaw"};
  for (int k = 0; k < 3; ++k) {
    for (double sign : {1.0, -1.0}) {
      Vec6 w = Vec6::Zero();
      w[3 + k] = sign * tau_auth;
      const alloc::AllocationSolution sol =
          alloc::solve_allocation_qp(f_tau, w, config.u_min, config.u_max, rho);
      if ((f_tau * sol.u - w).norm() > 0.02 * tau_auth) {
        result.reason = std::string("no ") + axis_names[k] + " authority (" +
                        (sign > 0 ? "+" : "-") + ")";
        return result;
      }
    }
  }
  result.feasible = true;
  return result;
}

// -- json + hashing -- //

namespace {

using nlohmann::json;

json mat3_to_json(const Mat3& m) {
  json arr = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) arr.push_back(m(r, c));
  return arr;
}

Mat3 mat3_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 9) throw ValidationError("expected 9-element matrix array");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = arr[static_cast<std::size_t>(3 * r + c)].get<double>();
  return m;
}

}  // namespace

std::string config_to_json(const AirframeConfig& config) {
  json j;
  j["rotors"] = json::array();
  for (const RotorSpec& r : config.rotors) {
    json jr;
    jr["t"] = {r.t[0], r.t[1], r.t[2]};
    jr["r"] = mat3_to_json(r.R);
    jr["alpha"] = r.alpha;
    j["rotors"].push_back(jr);
  }
  j["mass"] = config.mass;
  j["c_t"] = config.c_t;
  j["c_q"] = config.c_q;
  j["u_min"] = config.u_min;
  j["u_max"] = config.u_max;
  j["motor_mass"] = config.motor_mass;
  j["body_inertia"] = mat3_to_json(config.body_inertia);
  return j.dump(2) + "\n";
}

AirframeConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptPayload(std::string("airframe json parse: ") + e.what());
  }
  AirframeConfig config;
  try {
    for (const json& jr : j.at("rotors")) {
      RotorSpec r;
      const json& t = jr.at("t");
      if (!t.is_array() || t.size() != 3) throw ValidationError("rotor t must be a 3-vector");
      for (int k = 0; k < 3; ++k) r.t[k] = t[static_cast<std::size_t>(k)].get<double>();
      r.R = mat3_from_json(jr.at("r"));
      r.alpha = jr.at("alpha").get<double>();
      config.rotors.push_back(r);
    }
    config.mass = j.at("mass").get<double>();
    config.c_t = j.at("c_t").get<double>();
    config.c_q = j.at("c_q").get<double>();
    config.u_min = j.at("u_min").get<double>();
    config.u_max = j.at("u_max").get<double>();
    config.motor_mass = j.at("motor_mass").get<double>();
    config.body_inertia = mat3_from_json(j.at("body_inertia"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("airframe json schema: ") + e.what());
  }
  config.validate();
  return config;
}

void save_config(const std::filesystem::path& path, const AirframeConfig& config) {
  io::atomic_write(path, config_to_json(config));
}

AirframeConfig load_config(const std::filesystem::path& path) {
  return config_from_json(io::read_text(path));
}

std::uint64_t config_hash(const AirframeConfig& config) {
  io::Fnv1a h;
  h.update_u64(static_cast<std::uint64_t>(config.n_m()));
  for (const RotorSpec& r : config.rotors) {
    for (int k = 0; k < 3; ++k) h.update_f64(r.t[k]);
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) h.update_f64(r.R(row, col));
    h.update_f64(r.alpha);
  }
  h.update_f64(config.mass);
  h.update_f64(config.c_t);
  h.update_f64(config.c_q);
  h.update_f64(config.u_min);
  h.update_f64(config.u_max);
  h.update_f64(config.motor_mass);
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) h.update_f64(config.body_inertia(row, col));
  return h.digest();
}

AirframeConfig standard_airframe(int n_m, double arm_length) {
  if (n_m != 4 && n_m != 6) throw ValidationError("standard airframe supports 4 or 6 rotors");
  AirframeConfig config;
  config.mass = n_m == 4 ? 1.0 : 1.4;
  config.body_inertia = Mat3::Zero();
  config.body_inertia.diagonal() << 2e-3, 2e-3, 4e-3;
  // x-layout for quads, motor 0 front-right; hex starts on +x
  const double offset = n_m == 4 ? std::numbers::pi / 4.0 : 0.0;
  for (int i = 0; i < n_m; ++i) {
    RotorSpec r;
    const double az = offset + 2.0 * std::numbers::pi * i / n_m;
    r.t = arm_length * Vec3(std::cos(az), std::sin(az), 0.0);
    r.R = Mat3::Identity();
    r.alpha = i % 2 == 0 ? 1.0 : -1.0;
    config.rotors.push_back(r);
  }
  config.validate();
  return config;
}

}  // namespace wrenchlab
