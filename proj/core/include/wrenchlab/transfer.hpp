#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/neural.hpp"
#include "wrenchlab/rl.hpp"

namespace wrenchlab::transfer {

// how a candidate donor is compared against a new airframe
enum class MeasureId {
  param_distance,   // norm of the stacked geometry + inertia difference
  accel_distance,   // matched distance between admissible acceleration clouds
  deployed_reward,  // donor policy deployed on the new airframe and scored
};

std::string measure_to_string(MeasureId id);
MeasureId measure_from_string(const std::string& s);

struct SimilarityScore {
  MeasureId measure = MeasureId::param_distance;
  double value = 0.0;
  bool higher_better = false;  // deployed_reward only
  long long cost = 0;          // env interactions charged for this score
};

// zero-cost geometric distance; both configs must have the same motor count
SimilarityScore measure_param_distance(const AirframeConfig& a, const AirframeConfig& b);

// pushforward of u ~ U([u_min,u_max]^n_m) through the rigid-body maps:
// rows are [linear acceleration without gravity; angular acceleration
// without the gyroscopic term], body frame
MatX sample_admissible_accelerations(const AirframeConfig& config, int n, std::uint64_t seed);

enum class WassersteinForm {
  mean_distance_sqrt,  // sqrt of the mean matched distance
  standard_w2,         // sqrt of the mean matched squared distance
};

// exact optimal matching between the two sampled acceleration clouds;
// both clouds are drawn with the same seed so the measure is symmetric
SimilarityScore measure_accel_distance(const AirframeConfig& a, const AirframeConfig& b,
                                       int n = 256, std::uint64_t seed = 0,
                                       WassersteinForm form = WassersteinForm::mean_distance_sqrt);

struct EntryMetadata {
  double final_reward = 0.0;
  long long interactions = 0;
  std::uint64_t seed = 0;
  std::string fidelity = "low";
  std::string created_utc;
};

struct LibraryEntry {
  std::string name;  // directory name under the library root
  AirframeConfig airframe;
  std::uint64_t hash = 0;
  WrenchBox box;
  nn::MlpModel alloc_net;
  rl::PolicyPair policy;
  EntryMetadata meta;
};

// on-disk layout: root/index.json plus one directory per entry holding
// config.json, alloc.bin, policy.bin and manifest.json
struct Library {
  std::filesystem::path root;
  std::vector<LibraryEntry> entries;  // sorted by name
};

Library create_library(const std::filesystem::path& root);
Library open_library(const std::filesystem::path& root);
// persists atomically (temp dir + rename), then updates the index
void add_entry(Library& lib, LibraryEntry entry);
LibraryEntry make_entry(const AirframeConfig& airframe, const nn::MlpModel& alloc_net,
                        const rl::PolicyPair& policy, const EntryMetadata& meta);

// deploys the entry's policy on the new airframe through the new airframe's
// own box and allocation net; common random numbers across entries via seed
SimilarityScore measure_deployed_reward(const AirframeConfig& c_new,
                                        const nn::MlpModel& alloc_new, const WrenchBox& box_new,
                                        const LibraryEntry& entry, int n_envs = 64, int T = 300,
                                        std::uint64_t seed = 0);

struct MeasureParams {
  int mr_envs = 64;
  int mr_steps = 300;
  int mwd_samples = 256;
  WassersteinForm mwd_form = WassersteinForm::mean_distance_sqrt;
  std::uint64_t seed = 0;
};

struct ScoreRow {
  std::uint64_t entry_hash = 0;
  bool comparable = false;  // param_distance skips entries with other n_m
  SimilarityScore score;
};

struct SelectionResult {
  std::size_t donor_index = 0;  // into library.entries
  std::vector<ScoreRow> rows;   // one per entry, library order
  long long total_cost = 0;
};

// best score in the measure's direction; ties break on lowest config hash
SelectionResult select_donor(const AirframeConfig& c_new, const nn::MlpModel& alloc_new,
                             const WrenchBox& box_new, const Library& lib, MeasureId measure,
                             const MeasureParams& params = {});

// csv with columns entry_hash,measure,value,cost (comparable rows only)
std::string score_table_to_csv(const SelectionResult& sel);

struct JumpStartResult {
  rl::TrainResult train;
  SelectionResult selection;
  std::uint64_t donor_hash = 0;
  MeasureId measure = MeasureId::deployed_reward;
};

// donor selection charged to the meter, then training continues from the
// donor's actor, critic, log-std and both optimizer states
JumpStartResult jump_start(const AirframeConfig& c_new, const nn::MlpModel& alloc_new,
                           const WrenchBox& box_new, const Library& lib, MeasureId measure,
                           const rl::PpoConfig& ppo, std::uint64_t seed,
                           const MeasureParams& params = {});

}  // namespace wrenchlab::transfer
