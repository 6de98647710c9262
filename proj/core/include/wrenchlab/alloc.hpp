#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/linalg.hpp"
#include "wrenchlab/neural.hpp"

namespace wrenchlab::alloc {

enum class AllocMode : std::uint8_t { unconstrained = 0, constrained = 1 };

const char* mode_name(AllocMode mode);

struct AllocationSolution {
  VecX u;                    // motor thrusts, within bounds
  Vec6 s = Vec6::Zero();     // achieved minus desired wrench, F u - w_d
  double kkt_residual = 0.0; // inf-norm of the projected-gradient fixed-point residual
  int iterations = 0;
  bool converged = true;
};

// minimize ||u||^2 + rho ||F u - w_d||^2 over the thrust box; the slack
// formulation collapses to this box QP once s is eliminated
AllocationSolution solve_allocation_qp(const AllocationMatrix& f, const Vec6& w_d,
                                       double u_min, double u_max, double rho = 1.0);

// shares factorizations across many targets
std::vector<AllocationSolution> solve_allocation_qp_batch(const AllocationMatrix& f,
                                                          const std::vector<Vec6>& w_d,
                                                          double u_min, double u_max,
                                                          double rho = 1.0);

// minimum-norm unconstrained allocation via the pseudo-inverse
MatX pseudo_inverse(const AllocationMatrix& f);
VecX solve_unconstrained(const AllocationMatrix& f, const Vec6& w_d);

// supervised pairs in normalized coordinates: inputs are box commands in
// [-1,1]^6, labels are thrusts mapped to [0,1] by the thrust range
struct AllocationDataset {
  MatX inputs;   // n x 6
  MatX labels;   // n x n_m
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  AllocMode mode = AllocMode::unconstrained;
  int qp_failures = 0;  // solves that hit the iteration cap

  Eigen::Index size() const { return inputs.rows(); }
};

AllocationDataset generate_dataset(const AirframeConfig& config, const WrenchBox& box,
                                   AllocMode mode, int n, std::uint64_t seed,
                                   double rho = 1.0);

void save_dataset(const std::filesystem::path& path, const AllocationDataset& ds);
AllocationDataset load_dataset(const std::filesystem::path& path);

struct TrainOptions {
  int max_epochs = 2000;
  int patience = 50;        // epochs without validation improvement before stopping
  double lr = 1e-3;
  int minibatch = 512;
  double val_fraction = 0.1;
};

struct TrainLog {
  std::vector<double> train_loss;  // per epoch, mean squared error
  std::vector<double> val_loss;
  int epochs = 0;
  bool plateaued = false;
};

struct TrainResult {
  nn::MlpModel model;
  TrainLog log;
};

// unconstrained: one hidden layer of 32, all linear; constrained: 3x100 leaky relu
TrainResult train_allocation_net(const AllocationDataset& ds, AllocMode mode,
                                 std::uint64_t seed, const TrainOptions& opts = {});

struct AllocError {
  double max_abs = 0.0;
  double mean_abs = 0.0;
};

// fresh-sample error against the matching expert, normalized to thrust range
AllocError evaluate_allocation_error(const nn::MlpModel& model, const AirframeConfig& config,
                                     const WrenchBox& box, AllocMode mode, int n,
                                     std::uint64_t seed, double rho = 1.0);

std::string error_report_json(std::uint64_t config_hash, AllocMode mode, int n,
                              const AllocError& err, std::uint64_t seed);

}  // namespace wrenchlab::alloc
