#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/rl.hpp"
#include "wrenchlab/rng.hpp"
#include "wrenchlab/transfer.hpp"

namespace wrenchlab::lab {

inline constexpr double kDegree = 3.14159265358979323846 / 180.0;

// geometry randomization for pool configs: arm lengths from a cone stump
// around each nominal direction, rotor tilts capped at max_tilt
struct SamplingSpec {
  int n_m = 4;
  double l_min = 0.10;                       // m
  double l_max = 0.35;                       // m
  double cone_angle = 60.0 * kDegree;        // half-angle around nominal arm
  double max_tilt = 20.0 * kDegree;          // rotor z-axis deviation cap
  double neighbor_pos_dev = 0.05;            // m, ball radius
  double neighbor_ang_dev = 5.0 * kDegree;   // rotation magnitude cap

  void validate() const;
};

// feasibility-screened draws; both throw SamplingExhausted after 100 rejects
AirframeConfig sample_config(const SamplingSpec& spec, Rng& rng);
std::vector<AirframeConfig> sample_neighbors(const AirframeConfig& base, int k,
                                             const SamplingSpec& spec, Rng& rng);

// everything a campaign needs, json round-trippable for the cli
struct CampaignConfig {
  SamplingSpec sampling;
  int n_bases = 8;
  int n_neighbors = 2;
  std::vector<std::uint64_t> train_seeds = {1, 2};  // per-config scratch seeds
  std::uint64_t seed = 7;                           // pool sampling + donor draws
  rl::PpoConfig ppo;                                // training recipe
  double learn_threshold = 400.0;     // min final eval reward to keep a config
  int alloc_dataset_n = 50'000;
  std::vector<double> goal_fractions = {0.5, 0.6, 0.7, 0.8, 0.9};
  double accept_goal_fraction = 0.8;  // fraction of median scratch final reward
  int mr_envs = 64;
  int mr_steps = 300;
  int mwd_samples = 256;
  int permutations = 10'000;          // correlation p-value resamples
  std::vector<double> sensitivity_levels = {0.0, 1e-3, 1e-2, 5e-2};
  int sensitivity_seeds = 3;

  void validate() const;
};

std::string campaign_to_json(const CampaignConfig& cfg);
CampaignConfig campaign_from_json(const std::string& text);

// hyperparameter block shared by campaign json and run manifests;
// from_json applies the fields present in text on top of base
std::string ppo_to_json_text(const rl::PpoConfig& ppo);
rl::PpoConfig ppo_from_json_text(const std::string& text, rl::PpoConfig base = {});

// the tuned recipe used by campaigns and the hover acceptance gate
rl::PpoConfig campaign_ppo();

// pool role bookkeeping: which sampled config is a base vs a neighbor
struct PoolMember {
  std::string name;            // "base-3" or "base-3-n1"
  std::uint64_t hash = 0;
  bool is_base = false;
  AirframeConfig airframe;
};

// deterministic pool from cfg.seed: bases first, then neighbors in base order
std::vector<PoolMember> sample_pool(const CampaignConfig& cfg);

// one persisted training run; lives under dir/runs as json + curve csv
struct RunRecord {
  std::string key;             // "<hash-hex>-<strategy>-s<seed>"
  std::uint64_t config_hash = 0;
  std::string strategy;        // "scratch" | "random" | "sparse" | "full"
  std::uint64_t seed = 0;
  std::uint64_t donor_hash = 0;
  long long selection_cost = 0;
  rl::TrainingCurve curve;
};

// the manifest records the full hyperparameter block when one is given
void save_run(const std::filesystem::path& dir, const RunRecord& run,
              const rl::PpoConfig* ppo = nullptr);
std::optional<RunRecord> load_run(const std::filesystem::path& dir, const std::string& key);

// first meter reading at or above goal; nullopt when the curve never crosses
std::optional<long long> interactions_to_goal(const rl::TrainingCurve& curve, double goal);

// trains pool configs from scratch per seed, keeps the best seed per config,
// discards configs under the learn threshold; resumes from existing runs
transfer::Library build_library(const std::filesystem::path& dir, const CampaignConfig& cfg);

struct CorrelationCell {
  transfer::MeasureId measure;
  double goal = 0.0;           // absolute goal reward
  double rho = 0.0;
  double p_value = 1.0;
  bool degenerate = false;
  int n = 0;                   // paired points used
};

struct CorrelationStudy {
  std::vector<CorrelationCell> cells;            // measures x goals
  std::map<std::string, CorrelationCell> reported;  // highest goal with p <= 0.01
  double median_scratch_final = 0.0;
};

// retrains each config from a random donor, correlates each measure's value
// against interactions-to-goal across the pool
CorrelationStudy correlation_study(const std::filesystem::path& dir, const CampaignConfig& cfg,
                                   const transfer::Library& lib);

struct SavingsRow {
  std::uint64_t config_hash = 0;
  std::map<std::string, std::optional<long long>> to_goal;  // strategy -> interactions
};

struct SavingsStudy {
  double goal = 0.0;
  std::vector<SavingsRow> rows;
  std::map<std::string, double> median_savings;  // strategy -> fraction saved
  std::map<std::string, int> failures;           // strategy -> configs off goal
};

// strategies: scratch, random donor, best-deployed-reward donor over the base
// entries only (sparse) and over the full library
SavingsStudy savings_study(const std::filesystem::path& dir, const CampaignConfig& cfg,
                           const transfer::Library& lib);

struct SensitivityPoint {
  double level = 0.0;          // target mean absolute normalized thrust error
  double mean_error = 0.0;     // position error averaged over seeds
  std::vector<double> per_seed;
};

struct SensitivityStudy {
  std::vector<SensitivityPoint> points;
};

// frozen policy, uniform thrust noise calibrated per level, tail position
// error over deterministic episodes
SensitivityStudy sensitivity_study(const AirframeConfig& airframe, const nn::MlpModel& alloc_net,
                                   const WrenchBox& box, const rl::PolicyPair& policy,
                                   const std::vector<double>& levels, int n_seeds,
                                   std::uint64_t seed);

std::string correlation_to_csv(const CorrelationStudy& study);
std::string savings_to_csv(const SavingsStudy& study);
std::string sensitivity_to_csv(const SensitivityStudy& study);

}  // namespace wrenchlab::lab
