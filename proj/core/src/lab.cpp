#include "wrenchlab/lab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "wrenchlab/alloc.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"
#include "wrenchlab/sim.hpp"
#include "wrenchlab/stats.hpp"

namespace wrenchlab::lab {

using nlohmann::json;

namespace {

constexpr std::uint64_t kPoolStream = 0x706f6f6c;
constexpr std::uint64_t kAllocStream = 0x616c6c6f;
constexpr std::uint64_t kDonorStream = 0x646f6e72;
constexpr std::uint64_t kSelectStream = 0x73656c63;
constexpr std::uint64_t kSpearStream = 0x73706561;
constexpr std::uint64_t kSensStream = 0x73656e73;
constexpr std::uint64_t kReplaceStream = 0x7265706c;

constexpr double kPi = 3.14159265358979323846;

std::uint64_t parse_hex_u64(const std::string& s) {
  if (s.empty() || s.size() > 16) throw CorruptPayload("bad hex value: " + s);
  std::uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else throw CorruptPayload("bad hex value: " + s);
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

// deterministic orthonormal frame completion around a unit axis
void frame_around(const Vec3& d, Vec3& e1, Vec3& e2) {
  const Vec3 pick = std::abs(d.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  e1 = d.cross(pick).normalized();
  e2 = d.cross(e1);
}

Vec3 sample_cone_direction(const Vec3& axis, double half_angle, Rng& rng) {
  const double cos_theta = rng.uniform(std::cos(half_angle), 1.0);
  const double az = rng.uniform(0.0, 2.0 * kPi);
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
  Vec3 e1, e2;
  frame_around(axis, e1, e2);
  return cos_theta * axis + sin_theta * (std::cos(az) * e1 + std::sin(az) * e2);
}

Vec3 sample_sphere_direction(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double az = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return Vec3(r * std::cos(az), r * std::sin(az), z);
}

}  // namespace

void SamplingSpec::validate() const {
  if (n_m != 4 && n_m != 6) throw ValidationError("sampling spec needs 4 or 6 motors");
  if (!(l_min > 0.0) || !(l_max > l_min)) throw ValidationError("need 0 < l_min < l_max");
  if (!(cone_angle >= 0.0) || cone_angle >= kPi / 2) throw ValidationError("cone angle outside [0, pi/2)");
  if (!(max_tilt >= 0.0) || max_tilt >= kPi / 2) throw ValidationError("max tilt outside [0, pi/2)");
  if (neighbor_pos_dev < 0.0 || neighbor_ang_dev < 0.0)
    throw ValidationError("negative neighbor deviation");
}

AirframeConfig sample_config(const SamplingSpec& spec, Rng& rng) {
  spec.validate();
  const AirframeConfig nominal = standard_airframe(spec.n_m);
  for (int attempt = 0; attempt < 100; ++attempt) {
    AirframeConfig c = nominal;
    for (int i = 0; i < spec.n_m; ++i) {
      auto& rotor = c.rotors[static_cast<std::size_t>(i)];
      const Vec3 axis = nominal.rotors[static_cast<std::size_t>(i)].t.normalized();
      const double l = rng.uniform(spec.l_min, spec.l_max);
      rotor.t = l * sample_cone_direction(axis, spec.cone_angle, rng);
      const double tilt_az = rng.uniform(0.0, 2.0 * kPi);
      const double tilt = rng.uniform(0.0, spec.max_tilt);
      const Vec3 tilt_axis(std::cos(tilt_az), std::sin(tilt_az), 0.0);
      rotor.R = Eigen::AngleAxisd(tilt, tilt_axis).toRotationMatrix();
    }
    if (feasibility_check(c).feasible) return c;
  }
  throw SamplingExhausted("no feasible configuration in 100 draws");
}

std::vector<AirframeConfig> sample_neighbors(const AirframeConfig& base, int k,
                                             const SamplingSpec& spec, Rng& rng) {
  spec.validate();
  base.validate();
  std::vector<AirframeConfig> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      AirframeConfig c = base;
      for (auto& rotor : c.rotors) {
        const Vec3 dir = sample_sphere_direction(rng);
        const double r = spec.neighbor_pos_dev * std::cbrt(rng.uniform(0.0, 1.0));
        rotor.t += r * dir;
        const Vec3 rot_axis = sample_sphere_direction(rng);
        const double angle = rng.uniform(0.0, spec.neighbor_ang_dev);
        rotor.R = Eigen::AngleAxisd(angle, rot_axis).toRotationMatrix() * rotor.R;
      }
      if (feasibility_check(c).feasible) {
        out.push_back(std::move(c));
        placed = true;
      }
    }
    if (!placed) throw SamplingExhausted("no feasible neighbor in 100 draws");
  }
  return out;
}

// -- campaign config -- //

void CampaignConfig::validate() const {
  sampling.validate();
  if (n_bases < 1 || n_neighbors < 0) throw ValidationError("bad pool size");
  if (train_seeds.empty()) throw ValidationError("need at least one training seed");
  if (learn_threshold < 0.0) throw ValidationError("negative learn threshold");
  if (alloc_dataset_n < 1) throw ValidationError("bad allocation dataset size");
  if (goal_fractions.empty()) throw ValidationError("empty goal grid");
  for (double f : goal_fractions)
    if (!(f > 0.0) || f > 1.0) throw ValidationError("goal fractions must lie in (0, 1]");
  if (accept_goal_fraction <= 0.0 || accept_goal_fraction > 1.0)
    throw ValidationError("acceptance goal fraction outside (0, 1]");
  if (mr_envs < 1 || mr_steps < 1 || mwd_samples < 1) throw ValidationError("bad measure budget");
  if (permutations < 1) throw ValidationError("bad permutation count");
  if (sensitivity_seeds < 1) throw ValidationError("bad sensitivity seed count");
}

namespace {

json ppo_to_json(const rl::PpoConfig& p) {
  json j;
  j["gamma"] = p.gamma;
  j["lambda"] = p.lambda;
  j["clip"] = p.clip;
  j["epochs"] = p.epochs;
  j["minibatch"] = p.minibatch;
  j["n_envs"] = p.n_envs;
  j["rollout_len"] = p.rollout_len;
  j["value_coef"] = p.value_coef;
  j["entropy_coef"] = p.entropy_coef;
  j["caps_temporal"] = p.caps_temporal;
  j["caps_spatial"] = p.caps_spatial;
  j["caps_sigma"] = p.caps_sigma;
  j["lr_actor"] = p.lr_actor;
  j["lr_critic"] = p.lr_critic;
  j["init_log_std"] = p.init_log_std;
  j["final_log_std"] = p.final_log_std;
  j["log_std_anneal_updates"] = p.log_std_anneal_updates;
  j["max_interactions"] = p.max_interactions;
  if (p.goal_reward) j["goal_reward"] = *p.goal_reward;
  j["eval_every"] = p.eval_every;
  j["eval_envs"] = p.eval_envs;
  j["eval_steps"] = p.eval_steps;
  j["goal_window"] = p.goal_window;
  return j;
}

rl::PpoConfig ppo_from_json(const json& j, rl::PpoConfig p = {}) {
  p.gamma = j.value("gamma", p.gamma);
  p.lambda = j.value("lambda", p.lambda);
  p.clip = j.value("clip", p.clip);
  p.epochs = j.value("epochs", p.epochs);
  p.minibatch = j.value("minibatch", p.minibatch);
  p.n_envs = j.value("n_envs", p.n_envs);
  p.rollout_len = j.value("rollout_len", p.rollout_len);
  p.value_coef = j.value("value_coef", p.value_coef);
  p.entropy_coef = j.value("entropy_coef", p.entropy_coef);
  p.caps_temporal = j.value("caps_temporal", p.caps_temporal);
  p.caps_spatial = j.value("caps_spatial", p.caps_spatial);
  p.caps_sigma = j.value("caps_sigma", p.caps_sigma);
  p.lr_actor = j.value("lr_actor", p.lr_actor);
  p.lr_critic = j.value("lr_critic", p.lr_critic);
  p.init_log_std = j.value("init_log_std", p.init_log_std);
  p.final_log_std = j.value("final_log_std", p.final_log_std);
  p.log_std_anneal_updates = j.value("log_std_anneal_updates", p.log_std_anneal_updates);
  p.max_interactions = j.value("max_interactions", p.max_interactions);
  if (j.contains("goal_reward")) p.goal_reward = j.at("goal_reward").get<double>();
  p.eval_every = j.value("eval_every", p.eval_every);
  p.eval_envs = j.value("eval_envs", p.eval_envs);
  p.eval_steps = j.value("eval_steps", p.eval_steps);
  p.goal_window = j.value("goal_window", p.goal_window);
  return p;
}

}  // namespace

std::string ppo_to_json_text(const rl::PpoConfig& ppo) { return ppo_to_json(ppo).dump(2) + "\n"; }

rl::PpoConfig ppo_from_json_text(const std::string& text, rl::PpoConfig base) {
  try {
    return ppo_from_json(json::parse(text), std::move(base));
  } catch (const json::exception& e) {
    throw CorruptPayload(std::string("ppo json parse: ") + e.what());
  }
}

std::string campaign_to_json(const CampaignConfig& cfg) {
  json j;
  j["sampling"] = {{"n_m", cfg.sampling.n_m},
                   {"l_min", cfg.sampling.l_min},
                   {"l_max", cfg.sampling.l_max},
                   {"cone_angle", cfg.sampling.cone_angle},
                   {"max_tilt", cfg.sampling.max_tilt},
                   {"neighbor_pos_dev", cfg.sampling.neighbor_pos_dev},
                   {"neighbor_ang_dev", cfg.sampling.neighbor_ang_dev}};
  j["n_bases"] = cfg.n_bases;
  j["n_neighbors"] = cfg.n_neighbors;
  j["train_seeds"] = cfg.train_seeds;
  j["seed"] = cfg.seed;
  j["ppo"] = ppo_to_json(cfg.ppo);
  j["learn_threshold"] = cfg.learn_threshold;
  j["alloc_dataset_n"] = cfg.alloc_dataset_n;
  j["goal_fractions"] = cfg.goal_fractions;
  j["accept_goal_fraction"] = cfg.accept_goal_fraction;
  j["mr_envs"] = cfg.mr_envs;
  j["mr_steps"] = cfg.mr_steps;
  j["mwd_samples"] = cfg.mwd_samples;
  j["permutations"] = cfg.permutations;
  j["sensitivity_levels"] = cfg.sensitivity_levels;
  j["sensitivity_seeds"] = cfg.sensitivity_seeds;
  return j.dump(2) + "\n";
}

CampaignConfig campaign_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptPayload(std::string("campaign json parse: ") + e.what());
  }
  CampaignConfig cfg;
  if (j.contains("sampling")) {
    const json& s = j["sampling"];
    cfg.sampling.n_m = s.value("n_m", cfg.sampling.n_m);
    cfg.sampling.l_min = s.value("l_min", cfg.sampling.l_min);
    cfg.sampling.l_max = s.value("l_max", cfg.sampling.l_max);
    cfg.sampling.cone_angle = s.value("cone_angle", cfg.sampling.cone_angle);
    cfg.sampling.max_tilt = s.value("max_tilt", cfg.sampling.max_tilt);
    cfg.sampling.neighbor_pos_dev = s.value("neighbor_pos_dev", cfg.sampling.neighbor_pos_dev);
    cfg.sampling.neighbor_ang_dev = s.value("neighbor_ang_dev", cfg.sampling.neighbor_ang_dev);
  }
  cfg.n_bases = j.value("n_bases", cfg.n_bases);
  cfg.n_neighbors = j.value("n_neighbors", cfg.n_neighbors);
  if (j.contains("train_seeds"))
    cfg.train_seeds = j.at("train_seeds").get<std::vector<std::uint64_t>>();
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("ppo")) cfg.ppo = ppo_from_json(j["ppo"]);
  cfg.learn_threshold = j.value("learn_threshold", cfg.learn_threshold);
  cfg.alloc_dataset_n = j.value("alloc_dataset_n", cfg.alloc_dataset_n);
  if (j.contains("goal_fractions"))
    cfg.goal_fractions = j.at("goal_fractions").get<std::vector<double>>();
  cfg.accept_goal_fraction = j.value("accept_goal_fraction", cfg.accept_goal_fraction);
  cfg.mr_envs = j.value("mr_envs", cfg.mr_envs);
  cfg.mr_steps = j.value("mr_steps", cfg.mr_steps);
  cfg.mwd_samples = j.value("mwd_samples", cfg.mwd_samples);
  cfg.permutations = j.value("permutations", cfg.permutations);
  if (j.contains("sensitivity_levels"))
    cfg.sensitivity_levels = j.at("sensitivity_levels").get<std::vector<double>>();
  cfg.sensitivity_seeds = j.value("sensitivity_seeds", cfg.sensitivity_seeds);
  cfg.validate();
  return cfg;
}

rl::PpoConfig campaign_ppo() {
  rl::PpoConfig p;
  p.n_envs = 64;
  p.rollout_len = 300;  // full episode per rollout so late-episode states train
  p.gamma = 0.997;
  p.epochs = 10;
  p.lr_actor = 1e-3;
  p.lr_critic = 1e-3;
  p.log_std_anneal_updates = 250;
  p.final_log_std = -3.2;
  p.eval_every = 10;
  p.max_interactions = 5'000'000;
  return p;
}

// -- pool -- //

std::vector<PoolMember> sample_pool(const CampaignConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, kPoolStream));
  std::vector<PoolMember> pool;
  std::vector<AirframeConfig> bases;
  for (int b = 0; b < cfg.n_bases; ++b) {
    PoolMember m;
    m.name = "base-" + std::to_string(b);
    m.is_base = true;
    m.airframe = sample_config(cfg.sampling, rng);
    m.hash = config_hash(m.airframe);
    bases.push_back(m.airframe);
    pool.push_back(std::move(m));
  }
  for (int b = 0; b < cfg.n_bases; ++b) {
    const auto neighbors =
        sample_neighbors(bases[static_cast<std::size_t>(b)], cfg.n_neighbors, cfg.sampling, rng);
    for (int k = 0; k < cfg.n_neighbors; ++k) {
      PoolMember m;
      m.name = "base-" + std::to_string(b) + "-n" + std::to_string(k + 1);
      m.is_base = false;
      m.airframe = neighbors[static_cast<std::size_t>(k)];
      m.hash = config_hash(m.airframe);
      pool.push_back(std::move(m));
    }
  }
  return pool;
}

// -- run persistence -- //

namespace {

std::filesystem::path run_json_path(const std::filesystem::path& dir, const std::string& key) {
  return dir / "runs" / (key + ".json");
}

std::filesystem::path run_curve_path(const std::filesystem::path& dir, const std::string& key) {
  return dir / "runs" / (key + ".curve.csv");
}

std::filesystem::path run_policy_path(const std::filesystem::path& dir, const std::string& key) {
  return dir / "runs" / (key + ".policy.bin");
}

std::string run_key(std::uint64_t hash, const std::string& strategy, std::uint64_t seed) {
  return io::hex_u64(hash) + "-" + strategy + "-s" + std::to_string(seed);
}

}  // namespace

void save_run(const std::filesystem::path& dir, const RunRecord& run, const rl::PpoConfig* ppo) {
  std::filesystem::create_directories(dir / "runs");
  json j;
  j["key"] = run.key;
  j["config_hash"] = io::hex_u64(run.config_hash);
  j["strategy"] = run.strategy;
  j["seed"] = run.seed;
  j["donor_hash"] = io::hex_u64(run.donor_hash);
  j["selection_cost"] = run.selection_cost;
  if (ppo) j["ppo"] = ppo_to_json(*ppo);
  j["final_reward"] = run.curve.final_reward();
  j["interactions"] = run.curve.final_interactions();
  j["terminated_reason"] = run.curve.terminated_reason;
  j["wall_clock_s"] = run.curve.wall_clock_s;
  io::atomic_write(run_curve_path(dir, run.key), rl::curve_to_csv(run.curve));
  io::atomic_write(run_json_path(dir, run.key), j.dump(2) + "\n");
}

std::optional<RunRecord> load_run(const std::filesystem::path& dir, const std::string& key) {
  const auto jpath = run_json_path(dir, key);
  const auto cpath = run_curve_path(dir, key);
  if (!std::filesystem::exists(jpath) || !std::filesystem::exists(cpath)) return std::nullopt;
  json j;
  try {
    j = json::parse(io::read_text(jpath));
  } catch (const json::exception& e) {
    throw CorruptPayload("run manifest parse: " + std::string(e.what()));
  }
  RunRecord run;
  run.key = j.at("key").get<std::string>();
  run.config_hash = parse_hex_u64(j.at("config_hash").get<std::string>());
  run.strategy = j.at("strategy").get<std::string>();
  run.seed = j.at("seed").get<std::uint64_t>();
  run.donor_hash = parse_hex_u64(j.at("donor_hash").get<std::string>());
  run.selection_cost = j.at("selection_cost").get<long long>();
  run.curve = rl::curve_from_csv(io::read_text(cpath));
  run.curve.seed = run.seed;
  run.curve.terminated_reason = j.at("terminated_reason").get<std::string>();
  run.curve.wall_clock_s = j.at("wall_clock_s").get<double>();
  return run;
}

std::optional<long long> interactions_to_goal(const rl::TrainingCurve& curve, double goal) {
  for (const auto& [meter, reward] : curve.points)
    if (reward >= goal) return meter;
  return std::nullopt;
}

// -- library build -- //

namespace {

nn::MlpModel train_alloc_for(const std::filesystem::path& dir, const CampaignConfig& cfg,
                             const AirframeConfig& airframe, const WrenchBox& box,
                             std::uint64_t hash) {
  const auto mpath = dir / "runs" / (io::hex_u64(hash) + "-alloc.json");
  const auto apath = dir / "runs" / (io::hex_u64(hash) + "-alloc.bin");
  if (std::filesystem::exists(mpath) && std::filesystem::exists(apath))
    return nn::load_model(apath);
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t aseed = mix_seed(cfg.seed, kAllocStream, hash);
  const auto ds = alloc::generate_dataset(airframe, box, alloc::AllocMode::unconstrained,
                                          cfg.alloc_dataset_n, aseed);
  auto res = alloc::train_allocation_net(ds, alloc::AllocMode::unconstrained, aseed);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nn::save_model(apath, res.model);
  json j;
  j["config_hash"] = io::hex_u64(hash);
  j["seed"] = aseed;
  j["n"] = cfg.alloc_dataset_n;
  j["epochs"] = res.log.epochs;
  j["wall_clock_s"] = wall;
  io::atomic_write(mpath, j.dump(2) + "\n");
  return std::move(res.model);
}

struct ScratchOutcome {
  double best_final = -1.0;
  std::uint64_t best_seed = 0;
  bool have_policy = false;
  rl::PolicyPair policy;
  long long interactions = 0;
};

// trains (or resumes) every scratch seed for one config
ScratchOutcome run_scratch_seeds(const std::filesystem::path& dir, const CampaignConfig& cfg,
                                 const AirframeConfig& airframe, const nn::MlpModel& alloc_net,
                                 const WrenchBox& box, std::uint64_t hash) {
  rl::PpoConfig ppo = cfg.ppo;
  ppo.goal_reward.reset();  // library runs are budget-terminated
  ScratchOutcome out;
  for (std::uint64_t s : cfg.train_seeds) {
    const std::string key = run_key(hash, "scratch", s);
    auto cached = load_run(dir, key);
    if (!cached) {
      rl::TrainResult res = rl::train(airframe, alloc_net, box, ppo, nullptr, s);
      RunRecord run;
      run.key = key;
      run.config_hash = hash;
      run.strategy = "scratch";
      run.seed = s;
      run.curve = res.curve;
      save_run(dir, run, &ppo);
      rl::save_policy(run_policy_path(dir, key), res.policy);
      cached = run;
    }
    const double final_reward = cached->curve.final_reward();
    if (final_reward > out.best_final) {
      out.best_final = final_reward;
      out.best_seed = s;
      out.interactions = cached->curve.final_interactions();
      const auto ppath = run_policy_path(dir, key);
      if (std::filesystem::exists(ppath)) {
        out.policy = rl::load_policy(ppath);
        out.have_policy = true;
      } else {
        out.have_policy = false;
      }
    }
  }
  return out;
}

}  // namespace

transfer::Library build_library(const std::filesystem::path& dir, const CampaignConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(dir / "runs");
  std::filesystem::create_directories(dir / "pool");
  io::atomic_write(dir / "campaign.json", campaign_to_json(cfg));

  const std::filesystem::path lib_root = dir / "library";
  transfer::Library lib = std::filesystem::exists(lib_root / "index.json")
                              ? transfer::open_library(lib_root)
                              : transfer::create_library(lib_root);

  std::vector<PoolMember> pool = sample_pool(cfg);
  json discarded = json::array();

  for (std::size_t slot = 0; slot < pool.size(); ++slot) {
    PoolMember member = pool[slot];
    // a slot that fails to learn in every seed is refilled with a fresh draw
    for (int attempt = 0;; ++attempt) {
      const bool have = std::any_of(lib.entries.begin(), lib.entries.end(),
                                    [&](const auto& e) { return e.hash == member.hash; });
      if (have) break;

      const WrenchBox box = compute_wrench_box(member.airframe);
      const nn::MlpModel alloc_net = train_alloc_for(dir, cfg, member.airframe, box, member.hash);
      const ScratchOutcome sc =
          run_scratch_seeds(dir, cfg, member.airframe, alloc_net, box, member.hash);

      if (sc.best_final >= cfg.learn_threshold && sc.have_policy) {
        transfer::EntryMetadata meta;
        meta.final_reward = sc.best_final;
        meta.interactions = sc.interactions;
        meta.seed = sc.best_seed;
        meta.fidelity = "low";
        transfer::add_entry(lib, transfer::make_entry(member.airframe, alloc_net, sc.policy, meta));
        pool[slot] = member;
        break;
      }

      json d;
      d["name"] = member.name;
      d["hash"] = io::hex_u64(member.hash);
      d["best_final"] = sc.best_final;
      discarded.push_back(d);
      if (attempt >= 2) throw SamplingExhausted("slot " + member.name + " failed three draws");

      Rng rng(mix_seed(cfg.seed, kReplaceStream, mix_seed(static_cast<std::uint64_t>(slot),
                                                          static_cast<std::uint64_t>(attempt))));
      if (member.is_base) {
        member.airframe = sample_config(cfg.sampling, rng);
      } else {
        // keep the neighbor role: perturb around its base slot
        const std::size_t base_slot = static_cast<std::size_t>(
            (static_cast<int>(slot) - cfg.n_bases) / std::max(1, cfg.n_neighbors));
        member.airframe =
            sample_neighbors(pool[base_slot].airframe, 1, cfg.sampling, rng).front();
      }
      member.hash = config_hash(member.airframe);
      member.name += "-r" + std::to_string(attempt);
    }
  }

  // pool manifest reflects what actually entered the library
  json jpool = json::array();
  for (const auto& m : pool) {
    json jm;
    jm["name"] = m.name;
    jm["hash"] = io::hex_u64(m.hash);
    jm["is_base"] = m.is_base;
    jpool.push_back(jm);
    save_config(dir / "pool" / (m.name + ".json"), m.airframe);
  }
  json jroot;
  jroot["members"] = jpool;
  jroot["discarded"] = discarded;
  io::atomic_write(dir / "pool" / "pool.json", jroot.dump(2) + "\n");

  return transfer::open_library(lib_root);
}

// -- studies -- //

namespace {

std::vector<PoolMember> load_pool_manifest(const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(io::read_text(dir / "pool" / "pool.json"));
  } catch (const json::exception& e) {
    throw CorruptPayload("pool manifest parse: " + std::string(e.what()));
  }
  std::vector<PoolMember> pool;
  for (const auto& jm : j.at("members")) {
    PoolMember m;
    m.name = jm.at("name").get<std::string>();
    m.hash = parse_hex_u64(jm.at("hash").get<std::string>());
    m.is_base = jm.at("is_base").get<bool>();
    pool.push_back(std::move(m));
  }
  return pool;
}

double median_scratch_final(const std::filesystem::path& dir, const CampaignConfig& cfg,
                            const transfer::Library& lib) {
  std::vector<double> finals;
  for (const auto& entry : lib.entries)
    for (std::uint64_t s : cfg.train_seeds) {
      const auto run = load_run(dir, run_key(entry.hash, "scratch", s));
      if (!run) throw ValidationError("missing scratch run for " + entry.name);
      finals.push_back(run->curve.final_reward());
    }
  return stats::median(std::move(finals));
}

rl::PpoConfig goal_ppo(const CampaignConfig& cfg, double top_goal) {
  rl::PpoConfig ppo = cfg.ppo;
  ppo.goal_reward = top_goal;
  ppo.goal_window = 1;  // study readouts use first-crossing semantics
  return ppo;
}

// random donor retrain for one entry, resumable; also used by the savings arm
RunRecord random_donor_run(const std::filesystem::path& dir, const CampaignConfig& cfg,
                           const transfer::Library& lib, std::size_t self, double top_goal) {
  const auto& entry = lib.entries[self];
  const std::uint64_t s0 = cfg.train_seeds.front();
  const std::string key = run_key(entry.hash, "random", s0);
  if (auto cached = load_run(dir, key)) return *cached;

  Rng rng(mix_seed(cfg.seed, kDonorStream, entry.hash));
  std::size_t pick = rng.uniform_index(lib.entries.size() - 1);
  if (pick >= self) ++pick;
  const auto& donor = lib.entries[pick];

  const rl::PpoConfig ppo = goal_ppo(cfg, top_goal);
  rl::TrainResult res = rl::train(entry.airframe, entry.alloc_net, entry.box, ppo, &donor.policy, s0);
  RunRecord run;
  run.key = key;
  run.config_hash = entry.hash;
  run.strategy = "random";
  run.seed = s0;
  run.donor_hash = donor.hash;
  run.curve = res.curve;
  save_run(dir, run, &ppo);
  return run;
}

transfer::Library exclude_self(const transfer::Library& lib, std::uint64_t self_hash,
                               const std::vector<std::uint64_t>* keep_hashes) {
  transfer::Library sub;
  sub.root = lib.root;
  for (const auto& e : lib.entries) {
    if (e.hash == self_hash) continue;
    if (keep_hashes && std::find(keep_hashes->begin(), keep_hashes->end(), e.hash) ==
                           keep_hashes->end())
      continue;
    sub.entries.push_back(e);
  }
  return sub;
}

RunRecord selected_donor_run(const std::filesystem::path& dir, const CampaignConfig& cfg,
                             const transfer::Library& lib, std::size_t self, double top_goal,
                             const std::string& strategy,
                             const std::vector<std::uint64_t>* keep_hashes) {
  const auto& entry = lib.entries[self];
  const std::uint64_t s0 = cfg.train_seeds.front();
  const std::string key = run_key(entry.hash, strategy, s0);
  if (auto cached = load_run(dir, key)) return *cached;

  const transfer::Library sub = exclude_self(lib, entry.hash, keep_hashes);
  transfer::MeasureParams mp;
  mp.mr_envs = cfg.mr_envs;
  mp.mr_steps = cfg.mr_steps;
  mp.mwd_samples = cfg.mwd_samples;
  mp.seed = mix_seed(cfg.seed, kSelectStream, entry.hash);
  const rl::PpoConfig ppo = goal_ppo(cfg, top_goal);
  const auto t0 = std::chrono::steady_clock::now();
  transfer::JumpStartResult js = transfer::jump_start(
      entry.airframe, entry.alloc_net, entry.box, sub, transfer::MeasureId::deployed_reward, ppo,
      s0, mp);
  // charge the selection rollouts to this run's wall clock, matching the meter
  js.train.curve.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::atomic_write(dir / "runs" / (key + ".scores.csv"), transfer::score_table_to_csv(js.selection));

  RunRecord run;
  run.key = key;
  run.config_hash = entry.hash;
  run.strategy = strategy;
  run.seed = s0;
  run.donor_hash = js.donor_hash;
  run.selection_cost = js.selection.total_cost;
  run.curve = js.train.curve;
  save_run(dir, run, &ppo);
  return run;
}

}  // namespace

CorrelationStudy correlation_study(const std::filesystem::path& dir, const CampaignConfig& cfg,
                                   const transfer::Library& lib) {
  cfg.validate();
  if (lib.entries.size() < 2) throw InsufficientData("correlation needs at least two entries");

  CorrelationStudy study;
  study.median_scratch_final = median_scratch_final(dir, cfg, lib);
  const double top_goal =
      *std::max_element(cfg.goal_fractions.begin(), cfg.goal_fractions.end()) *
      study.median_scratch_final;

  // one random-donor retrain per entry plus the three measure readings
  struct Pair {
    double param = 0.0, accel = 0.0, deployed = 0.0;
    rl::TrainingCurve curve;
  };
  std::vector<Pair> pairs;
  std::ostringstream praw;
  praw.precision(17);
  praw << "config_hash,donor_hash,param_distance,accel_distance,deployed_reward\n";
  for (std::size_t i = 0; i < lib.entries.size(); ++i) {
    const RunRecord run = random_donor_run(dir, cfg, lib, i, top_goal);
    const auto& entry = lib.entries[i];
    const auto donor_it =
        std::find_if(lib.entries.begin(), lib.entries.end(),
                     [&](const auto& e) { return e.hash == run.donor_hash; });
    if (donor_it == lib.entries.end())
      throw CorruptPayload("donor of " + run.key + " missing from the library");

    Pair pr;
    pr.param = transfer::measure_param_distance(entry.airframe, donor_it->airframe).value;
    pr.accel = transfer::measure_accel_distance(entry.airframe, donor_it->airframe,
                                                cfg.mwd_samples,
                                                mix_seed(cfg.seed, kSelectStream, entry.hash))
                   .value;
    pr.deployed = transfer::measure_deployed_reward(entry.airframe, entry.alloc_net, entry.box,
                                                    *donor_it, cfg.mr_envs, cfg.mr_steps,
                                                    mix_seed(cfg.seed, kSelectStream, entry.hash))
                      .value;
    pr.curve = run.curve;
    praw << io::hex_u64(entry.hash) << ',' << io::hex_u64(run.donor_hash) << ',' << pr.param
         << ',' << pr.accel << ',' << pr.deployed << '\n';
    pairs.push_back(std::move(pr));
  }
  io::atomic_write(dir / "studies" / "correlation-pairs.csv", praw.str());

  const transfer::MeasureId measures[] = {transfer::MeasureId::param_distance,
                                          transfer::MeasureId::accel_distance,
                                          transfer::MeasureId::deployed_reward};
  bool any_cell = false;
  for (std::size_t mi = 0; mi < 3; ++mi) {
    for (std::size_t gi = 0; gi < cfg.goal_fractions.size(); ++gi) {
      const double goal = cfg.goal_fractions[gi] * study.median_scratch_final;
      std::vector<double> xs, ys;
      for (const auto& pr : pairs) {
        const auto crossing = interactions_to_goal(pr.curve, goal);
        if (!crossing) continue;
        const double x = mi == 0 ? pr.param : mi == 1 ? pr.accel : pr.deployed;
        xs.push_back(x);
        ys.push_back(static_cast<double>(*crossing));
      }
      CorrelationCell cell;
      cell.measure = measures[mi];
      cell.goal = goal;
      cell.n = static_cast<int>(xs.size());
      if (cell.n >= 5) {
        const Eigen::Map<const VecX> xv(xs.data(), static_cast<Eigen::Index>(xs.size()));
        const Eigen::Map<const VecX> yv(ys.data(), static_cast<Eigen::Index>(ys.size()));
        const auto sp = stats::spearman(xv, yv, cfg.permutations,
                                        mix_seed(cfg.seed, kSpearStream,
                                                 mix_seed(static_cast<std::uint64_t>(mi),
                                                          static_cast<std::uint64_t>(gi))));
        cell.rho = sp.rho;
        cell.p_value = sp.p_value;
        cell.degenerate = sp.degenerate;
        any_cell = true;
      } else {
        cell.degenerate = true;
      }
      study.cells.push_back(cell);
    }
  }
  if (!any_cell) throw InsufficientData("fewer than 5 paired points at every goal");

  // per measure: the highest goal whose p-value clears 0.01
  for (std::size_t mi = 0; mi < 3; ++mi) {
    const std::string name = transfer::measure_to_string(measures[mi]);
    const CorrelationCell* best = nullptr;
    for (const auto& cell : study.cells) {
      if (cell.measure != measures[mi] || cell.degenerate || cell.p_value > 0.01) continue;
      if (!best || cell.goal > best->goal) best = &cell;
    }
    if (best) study.reported[name] = *best;
  }

  io::atomic_write(dir / "studies" / "correlation.csv", correlation_to_csv(study));
  return study;
}

SavingsStudy savings_study(const std::filesystem::path& dir, const CampaignConfig& cfg,
                           const transfer::Library& lib) {
  cfg.validate();
  if (lib.entries.empty()) throw EmptyLibrary("savings study over an empty library");

  const double msf = median_scratch_final(dir, cfg, lib);
  const double top_goal =
      *std::max_element(cfg.goal_fractions.begin(), cfg.goal_fractions.end()) * msf;

  SavingsStudy study;
  study.goal = cfg.accept_goal_fraction * msf;

  std::vector<std::uint64_t> base_hashes;
  for (const auto& m : load_pool_manifest(dir))
    if (m.is_base) base_hashes.push_back(m.hash);

  const char* strategies[] = {"scratch", "random", "sparse", "full"};
  for (const char* s : strategies) study.failures[s] = 0;

  std::map<std::string, std::vector<double>> savings;
  for (std::size_t i = 0; i < lib.entries.size(); ++i) {
    const auto& entry = lib.entries[i];
    SavingsRow row;
    row.config_hash = entry.hash;

    // scratch baseline: mean over seeds of the goal crossing
    {
      std::vector<double> crossings;
      for (std::uint64_t s : cfg.train_seeds) {
        const auto run = load_run(dir, run_key(entry.hash, "scratch", s));
        if (!run) throw ValidationError("missing scratch run for " + entry.name);
        if (const auto c = interactions_to_goal(run->curve, study.goal))
          crossings.push_back(static_cast<double>(*c));
      }
      if (crossings.empty()) {
        row.to_goal["scratch"] = std::nullopt;
      } else {
        double acc = 0.0;
        for (double c : crossings) acc += c;
        row.to_goal["scratch"] =
            static_cast<long long>(acc / static_cast<double>(crossings.size()));
      }
    }

    const RunRecord random_run = random_donor_run(dir, cfg, lib, i, top_goal);
    row.to_goal["random"] = interactions_to_goal(random_run.curve, study.goal);
    const RunRecord sparse_run =
        selected_donor_run(dir, cfg, lib, i, top_goal, "sparse", &base_hashes);
    row.to_goal["sparse"] = interactions_to_goal(sparse_run.curve, study.goal);
    const RunRecord full_run = selected_donor_run(dir, cfg, lib, i, top_goal, "full", nullptr);
    row.to_goal["full"] = interactions_to_goal(full_run.curve, study.goal);

    const auto scratch_it = row.to_goal["scratch"];
    for (const char* s : strategies) {
      const auto it = row.to_goal[s];
      if (!it) {
        ++study.failures[s];
        continue;
      }
      if (scratch_it && *scratch_it > 0)
        savings[s].push_back(1.0 - static_cast<double>(*it) / static_cast<double>(*scratch_it));
    }
    study.rows.push_back(std::move(row));
  }

  for (auto& [s, vals] : savings)
    if (!vals.empty()) study.median_savings[s] = stats::median(vals);

  std::filesystem::create_directories(dir / "studies");
  io::atomic_write(dir / "studies" / "savings.csv", savings_to_csv(study));
  json j;
  j["goal"] = study.goal;
  j["median_scratch_final"] = msf;
  for (const auto& [s, v] : study.median_savings) j["median_savings"][s] = v;
  for (const auto& [s, n] : study.failures) j["failures"][s] = n;
  io::atomic_write(dir / "studies" / "savings.json", j.dump(2) + "\n");
  return study;
}

SensitivityStudy sensitivity_study(const AirframeConfig& airframe, const nn::MlpModel& alloc_net,
                                   const WrenchBox& box, const rl::PolicyPair& policy,
                                   const std::vector<double>& levels, int n_seeds,
                                   std::uint64_t seed) {
  if (n_seeds < 1) throw ValidationError("sensitivity needs n_seeds >= 1");
  constexpr int kEnvs = 64;
  constexpr int kSteps = 300;
  constexpr int kTail = 100;

  sim::SimParams params;
  sim::RewardConfig rc;
  rc.mode = sim::RewardMode::position_only;

  SensitivityStudy study;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    if (level < 0.0) throw ValidationError("negative sensitivity level");
    SensitivityPoint point;
    point.level = level;
    for (int s = 0; s < n_seeds; ++s) {
      rl::VecEnv env(airframe, alloc_net, box, params, rc, kEnvs);
      // identical initial states across levels and seeds isolate the noise effect
      Rng init_rng(mix_seed(seed, kSensStream));
      env.reset_all(init_rng);
      Rng noise_rng(mix_seed(seed, kSensStream, mix_seed(static_cast<std::uint64_t>(li),
                                                         static_cast<std::uint64_t>(s))));
      // uniform on [-2 level, 2 level] has mean absolute value = level
      const double amp = 2.0 * level;
      VecX rewards;
      std::vector<std::uint8_t> dones;
      MatX noise(kEnvs, env.n_m());
      double tail_acc = 0.0;
      int tail_count = 0;
      for (int t = 0; t < kSteps; ++t) {
        const MatX obs = env.observe();
        const MatX actions = nn::forward_fast(policy.actor, obs, nullptr);
        if (amp > 0.0) {
          for (int e = 0; e < kEnvs; ++e)
            for (int k = 0; k < env.n_m(); ++k) noise(e, k) = noise_rng.uniform(-amp, amp);
          env.step(actions, rewards, dones, &noise);
        } else {
          env.step(actions, rewards, dones);
        }
        if (t >= kSteps - kTail) {
          for (const auto& st : env.states()) tail_acc += st.p.norm();
          ++tail_count;
        }
      }
      point.per_seed.push_back(tail_acc / (static_cast<double>(tail_count) * kEnvs));
    }
    double acc = 0.0;
    for (double v : point.per_seed) acc += v;
    point.mean_error = acc / static_cast<double>(point.per_seed.size());
    study.points.push_back(std::move(point));
  }
  return study;
}

// -- csv emission -- //

std::string correlation_to_csv(const CorrelationStudy& study) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "measure,goal,rho,p_value,n,degenerate,reported\n";
  for (const auto& cell : study.cells) {
    const std::string name = transfer::measure_to_string(cell.measure);
    const auto rep = study.reported.find(name);
    const bool is_reported = rep != study.reported.end() && rep->second.goal == cell.goal;
    ss << name << ',' << cell.goal << ',' << cell.rho << ',' << cell.p_value << ',' << cell.n
       << ',' << (cell.degenerate ? 1 : 0) << ',' << (is_reported ? 1 : 0) << '\n';
  }
  return ss.str();
}

std::string savings_to_csv(const SavingsStudy& study) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "config_hash,scratch,random,sparse,full\n";
  for (const auto& row : study.rows) {
    ss << io::hex_u64(row.config_hash);
    for (const char* s : {"scratch", "random", "sparse", "full"}) {
      ss << ',';
      const auto it = row.to_goal.find(s);
      if (it != row.to_goal.end() && it->second) ss << *it->second;
    }
    ss << '\n';
  }
  return ss.str();
}

std::string sensitivity_to_csv(const SensitivityStudy& study) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "level,mean_error";
  const std::size_t n_seeds = study.points.empty() ? 0 : study.points.front().per_seed.size();
  for (std::size_t s = 0; s < n_seeds; ++s) ss << ",seed" << s;
  ss << '\n';
  for (const auto& point : study.points) {
    ss << point.level << ',' << point.mean_error;
    for (double v : point.per_seed) ss << ',' << v;
    ss << '\n';
  }
  return ss.str();
}

}  // namespace wrenchlab::lab
