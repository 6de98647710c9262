#include "wrenchlab/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <sstream>

#include <json.hpp>

#include "wrenchlab/assignment.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"
#include "wrenchlab/rng.hpp"

namespace wrenchlab::transfer {

using nlohmann::json;

namespace {

constexpr std::uint64_t kAccelStream = 0x61636365;

std::uint64_t parse_hex_u64(const std::string& s) {
  if (s.empty() || s.size() > 16) throw CorruptPayload("bad hex hash: " + s);
  std::uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else throw CorruptPayload("bad hex hash: " + s);
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

std::string utc_now_iso() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string measure_to_string(MeasureId id) {
  switch (id) {
    case MeasureId::param_distance: return "param-distance";
    case MeasureId::accel_distance: return "accel-distance";
    case MeasureId::deployed_reward: return "deployed-reward";
  }
  throw ValidationError("unknown measure id");
}

MeasureId measure_from_string(const std::string& s) {
  if (s == "param-distance") return MeasureId::param_distance;
  if (s == "accel-distance") return MeasureId::accel_distance;
  if (s == "deployed-reward") return MeasureId::deployed_reward;
  throw ValidationError("unknown measure: " + s);
}

// -- measures -- //

SimilarityScore measure_param_distance(const AirframeConfig& a, const AirframeConfig& b) {
  if (a.n_m() != b.n_m())
    throw IncomparableConfigs("parameter distance needs equal motor counts");
  double sq = 0.0;
  for (int i = 0; i < a.n_m(); ++i) {
    const auto& ra = a.rotors[static_cast<std::size_t>(i)];
    const auto& rb = b.rotors[static_cast<std::size_t>(i)];
    sq += (ra.t - rb.t).squaredNorm();
    sq += (ra.R - rb.R).squaredNorm();
  }
  sq += (point_mass_inertia(a) - point_mass_inertia(b)).squaredNorm();
  SimilarityScore s;
  s.measure = MeasureId::param_distance;
  s.value = std::sqrt(sq);
  return s;
}

MatX sample_admissible_accelerations(const AirframeConfig& config, int n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("acceleration sampling needs n >= 1");
  config.validate();
  const AllocationMatrix F = build_allocation_matrix(config);
  const Mat3 j_inv = point_mass_inertia(config).inverse();
  const double inv_m = 1.0 / config.mass;
  Rng rng(mix_seed(seed, kAccelStream));
  MatX out(n, 6);
  VecX u(config.n_m());
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < config.n_m(); ++k) u[k] = rng.uniform(config.u_min, config.u_max);
    const Vec6 w = F * u;
    out.row(i).head(3) = (inv_m * w.head(3)).transpose();
    out.row(i).tail(3) = (j_inv * w.tail(3)).transpose();
  }
  return out;
}

SimilarityScore measure_accel_distance(const AirframeConfig& a, const AirframeConfig& b, int n,
                                       std::uint64_t seed, WassersteinForm form) {
  if (n < 1) throw ValidationError("acceleration distance needs n >= 1");
  // same seed for both clouds keeps the measure symmetric in its arguments
  const MatX x = sample_admissible_accelerations(a, n, seed);
  const MatX y = sample_admissible_accelerations(b, n, seed);
  MatX cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = (x.row(i) - y.row(j)).norm();
      cost(i, j) = form == WassersteinForm::standard_w2 ? d * d : d;
    }
  const std::vector<int> perm = assign::solve_assignment(cost);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += cost(i, perm[static_cast<std::size_t>(i)]);
  mean /= n;
  SimilarityScore s;
  s.measure = MeasureId::accel_distance;
  s.value = std::sqrt(mean);
  return s;
}

SimilarityScore measure_deployed_reward(const AirframeConfig& c_new,
                                        const nn::MlpModel& alloc_new, const WrenchBox& box_new,
                                        const LibraryEntry& entry, int n_envs, int T,
                                        std::uint64_t seed) {
  if (n_envs < 1 || T < 1) throw ValidationError("deployed reward needs n_envs*T >= 1");
  SimilarityScore s;
  s.measure = MeasureId::deployed_reward;
  s.higher_better = true;
  s.value = rl::evaluate_policy(entry.policy, c_new, alloc_new, box_new, n_envs, T, seed);
  s.cost = static_cast<long long>(n_envs) * T;
  return s;
}

// -- library persistence -- //

namespace {

json meta_to_json(const LibraryEntry& e) {
  json j;
  j["name"] = e.name;
  j["hash"] = io::hex_u64(e.hash);
  j["final_reward"] = e.meta.final_reward;
  j["interactions"] = e.meta.interactions;
  j["seed"] = e.meta.seed;
  j["fidelity"] = e.meta.fidelity;
  j["created_utc"] = e.meta.created_utc;
  return j;
}

EntryMetadata meta_from_json(const json& j) {
  EntryMetadata m;
  m.final_reward = j.at("final_reward").get<double>();
  m.interactions = j.at("interactions").get<long long>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.fidelity = j.at("fidelity").get<std::string>();
  m.created_utc = j.value("created_utc", "");
  return m;
}

void write_index(const Library& lib) {
  json j;
  j["entries"] = json::array();
  for (const auto& e : lib.entries) j["entries"].push_back(meta_to_json(e));
  io::atomic_write(lib.root / "index.json", j.dump(2) + "\n");
}

LibraryEntry load_entry(const std::filesystem::path& dir, const std::string& name) {
  LibraryEntry e;
  e.name = name;
  e.airframe = load_config(dir / "config.json");
  e.hash = config_hash(e.airframe);
  e.box = compute_wrench_box(e.airframe);
  e.alloc_net = nn::load_model(dir / "alloc.bin");
  e.policy = rl::load_policy(dir / "policy.bin");
  json j;
  try {
    j = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& ex) {
    throw CorruptPayload("entry manifest parse: " + std::string(ex.what()));
  }
  e.meta = meta_from_json(j);
  const std::uint64_t recorded = parse_hex_u64(j.at("hash").get<std::string>());
  if (recorded != e.hash)
    throw CorruptPayload("entry " + name + " hash does not match its airframe");
  return e;
}

}  // namespace

Library create_library(const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  if (std::filesystem::exists(root / "index.json"))
    throw ValidationError("library already exists at " + root.string());
  Library lib;
  lib.root = root;
  write_index(lib);
  return lib;
}

Library open_library(const std::filesystem::path& root) {
  Library lib;
  lib.root = root;
  json j;
  try {
    j = json::parse(io::read_text(root / "index.json"));
  } catch (const json::exception& ex) {
    throw CorruptPayload("library index parse: " + std::string(ex.what()));
  }
  std::vector<std::string> names;
  for (const auto& je : j.at("entries")) names.push_back(je.at("name").get<std::string>());
  std::sort(names.begin(), names.end());
  for (const auto& name : names) lib.entries.push_back(load_entry(root / name, name));
  return lib;
}

LibraryEntry make_entry(const AirframeConfig& airframe, const nn::MlpModel& alloc_net,
                        const rl::PolicyPair& policy, const EntryMetadata& meta) {
  LibraryEntry e;
  e.airframe = airframe;
  e.hash = config_hash(airframe);
  e.box = compute_wrench_box(airframe);
  e.alloc_net = alloc_net;
  e.policy = policy;
  e.meta = meta;
  if (e.meta.created_utc.empty()) e.meta.created_utc = utc_now_iso();
  e.name = "entry-" + io::hex_u64(e.hash);
  return e;
}

void add_entry(Library& lib, LibraryEntry entry) {
  if (entry.name.empty()) throw ValidationError("library entry needs a name");
  for (const auto& e : lib.entries)
    if (e.name == entry.name) throw ValidationError("duplicate library entry " + entry.name);

  const std::filesystem::path tmp = lib.root / (".tmp-" + entry.name);
  const std::filesystem::path final_dir = lib.root / entry.name;
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);
  save_config(tmp / "config.json", entry.airframe);
  nn::save_model(tmp / "alloc.bin", entry.alloc_net);
  rl::save_policy(tmp / "policy.bin", entry.policy);
  io::atomic_write(tmp / "manifest.json", meta_to_json(entry).dump(2) + "\n");
  std::filesystem::rename(tmp, final_dir);

  lib.entries.push_back(std::move(entry));
  std::sort(lib.entries.begin(), lib.entries.end(),
            [](const LibraryEntry& a, const LibraryEntry& b) { return a.name < b.name; });
  write_index(lib);
}

// -- donor selection -- //

SelectionResult select_donor(const AirframeConfig& c_new, const nn::MlpModel& alloc_new,
                             const WrenchBox& box_new, const Library& lib, MeasureId measure,
                             const MeasureParams& params) {
  if (lib.entries.empty()) throw EmptyLibrary("donor selection over an empty library");

  SelectionResult sel;
  sel.rows.reserve(lib.entries.size());
  for (const auto& entry : lib.entries) {
    ScoreRow row;
    row.entry_hash = entry.hash;
    if (measure == MeasureId::param_distance && entry.airframe.n_m() != c_new.n_m()) {
      row.comparable = false;
      sel.rows.push_back(row);
      continue;
    }
    switch (measure) {
      case MeasureId::param_distance:
        row.score = measure_param_distance(c_new, entry.airframe);
        break;
      case MeasureId::accel_distance:
        row.score = measure_accel_distance(c_new, entry.airframe, params.mwd_samples, params.seed,
                                           params.mwd_form);
        break;
      case MeasureId::deployed_reward:
        row.score = measure_deployed_reward(c_new, alloc_new, box_new, entry, params.mr_envs,
                                            params.mr_steps, params.seed);
        break;
    }
    row.comparable = true;
    sel.total_cost += row.score.cost;
    sel.rows.push_back(row);
  }

  bool found = false;
  for (std::size_t i = 0; i < sel.rows.size(); ++i) {
    const ScoreRow& row = sel.rows[i];
    if (!row.comparable) continue;
    if (!found) {
      sel.donor_index = i;
      found = true;
      continue;
    }
    const ScoreRow& best = sel.rows[sel.donor_index];
    const bool better = row.score.higher_better ? row.score.value > best.score.value
                                                : row.score.value < best.score.value;
    const bool tie = row.score.value == best.score.value && row.entry_hash < best.entry_hash;
    if (better || tie) sel.donor_index = i;
  }
  if (!found) throw NoComparableEntry("no library entry comparable under " +
                                      measure_to_string(measure));
  return sel;
}

std::string score_table_to_csv(const SelectionResult& sel) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "entry_hash,measure,value,cost\n";
  for (const auto& row : sel.rows) {
    if (!row.comparable) continue;
    ss << io::hex_u64(row.entry_hash) << ',' << measure_to_string(row.score.measure) << ','
       << row.score.value << ',' << row.score.cost << '\n';
  }
  return ss.str();
}

JumpStartResult jump_start(const AirframeConfig& c_new, const nn::MlpModel& alloc_new,
                           const WrenchBox& box_new, const Library& lib, MeasureId measure,
                           const rl::PpoConfig& ppo, std::uint64_t seed,
                           const MeasureParams& params) {
  JumpStartResult out;
  out.selection = select_donor(c_new, alloc_new, box_new, lib, measure, params);
  out.measure = measure;
  const LibraryEntry& donor = lib.entries[out.selection.donor_index];
  out.donor_hash = donor.hash;
  out.train = rl::train(c_new, alloc_new, box_new, ppo, &donor.policy, seed,
                        out.selection.total_cost);
  return out;
}

}  // namespace wrenchlab::transfer
