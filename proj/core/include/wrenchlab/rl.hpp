#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/linalg.hpp"
#include "wrenchlab/neural.hpp"
#include "wrenchlab/rng.hpp"
#include "wrenchlab/sim.hpp"

namespace wrenchlab::rl {

// actor: obs -> normalized wrench command, noise lives in pre-squash space;
// the actor optimizer state covers [actor params; log_std]
struct PolicyPair {
  nn::MlpModel actor;   // 15 -> 32 -> 24 -> 6, tanh hidden, tanh squash
  nn::MlpModel critic;  // 15 -> 32 -> 24 -> 1, tanh hidden
  Vec6 log_std = Vec6::Constant(-0.5);
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;
};

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatch = 1024;
  int n_envs = 256;
  int rollout_len = 64;
  double value_coef = 0.5;
  double entropy_coef = 1e-3;
  double caps_temporal = 0.05;  // weight on ||mu(o_t) - mu(o_t+1)||^2
  double caps_spatial = 0.05;   // weight on ||mu(o) - mu(o + delta)||^2
  double caps_sigma = 0.05;     // std of the spatial perturbation delta
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double init_log_std = -0.5;
  // optional exploration schedule: when anneal updates > 0 the log-std is set
  // each update from a linear ramp init -> final over that many updates
  // (indexed by optimizer progress, so warm starts resume mid-ramp) and the
  // log-std gradient is frozen; 0 keeps log_std a learned parameter
  double final_log_std = -2.5;
  int log_std_anneal_updates = 0;
  long long max_interactions = 5'000'000;
  std::optional<double> goal_reward;  // early stop when sustained
  int eval_every = 2;    // updates between evaluations
  int eval_envs = 32;
  int eval_steps = 250;
  int goal_window = 10;  // moving average length for the goal test
};

struct TrainingCurve {
  std::vector<std::pair<long long, double>> points;  // (env interactions, eval reward)
  std::uint64_t seed = 0;
  double wall_clock_s = 0.0;
  std::string terminated_reason;  // "goal" | "budget"

  long long final_interactions() const { return points.empty() ? 0 : points.back().first; }
  double final_reward() const { return points.empty() ? 0.0 : points.back().second; }
};

std::string curve_to_csv(const TrainingCurve& curve);
TrainingCurve curve_from_csv(const std::string& text);

PolicyPair make_policy(std::uint64_t seed, double init_log_std = -0.5);

// policy-pair container with both models, log_std, and both optimizer states
std::vector<std::uint8_t> serialize_policy(const PolicyPair& policy);
PolicyPair deserialize_policy(const std::vector<std::uint8_t>& bytes);
void save_policy(const std::filesystem::path& path, const PolicyPair& policy);
PolicyPair load_policy(const std::filesystem::path& path);

// fixed observation feature scales applied by VecEnv::observe
inline constexpr double kVelScale = 1.0 / 3.0;
inline constexpr double kOmegaScale = 1.0 / 10.0;

// batched closed-loop environments: actor command -> allocation net -> sim
class VecEnv {
 public:
  VecEnv(const AirframeConfig& config, const nn::MlpModel& alloc_net, const WrenchBox& box,
         const sim::SimParams& params, const sim::RewardConfig& reward, int n_envs);

  void reset_all(Rng& rng, const sim::InitBounds& bounds = {});
  void reset_one(int e, Rng& rng, const sim::InitBounds& bounds = {});
  MatX observe(Rng* noise_rng = nullptr) const;  // n_envs x 15

  // a: n_envs x 6 normalized commands; crashed envs freeze with zero reward;
  // u_noise (n_envs x n_m) perturbs the normalized thrusts before clamping
  void step(const MatX& actions, VecX& rewards, std::vector<std::uint8_t>& dones,
            const MatX* u_noise = nullptr);

  int n_envs() const { return static_cast<int>(states_.size()); }
  int n_m() const { return model_.config.n_m(); }
  const sim::SimModel& model() const { return model_; }
  const std::vector<sim::RigidBodyState>& states() const { return states_; }
  const std::vector<std::uint8_t>& frozen() const { return frozen_; }
  // thrusts applied on the last step, for reward shaping and dumps
  const MatX& last_thrusts() const { return last_thrusts_; }

 private:
  sim::SimModel model_;
  nn::MlpModel alloc_net_;
  WrenchBox box_;
  sim::RewardConfig reward_;
  std::vector<sim::RigidBodyState> states_;
  std::vector<std::uint8_t> frozen_;
  MatX last_thrusts_;
};

// flattened on-policy batch, time-major rows (t * n_envs + e)
struct RolloutBatch {
  MatX obs;                          // N x 15
  MatX z;                            // N x 6 pre-squash actions
  VecX logp;                         // N, includes the squash correction
  VecX rewards;                      // N
  VecX values;                       // N
  std::vector<std::uint8_t> dones;   // N, crash terminals
  MatX obs_next;                     // N x 15, observation after the step
  std::vector<std::uint8_t> next_ok; // N, pair valid for the temporal term
  VecX bootstrap;                    // n_envs, V(s_T)
  VecX adv;                          // N, filled by compute_advantages
  VecX ret;                          // N
  int T = 0;
  int E = 0;
  long long interactions = 0;
};

// samples actions from the squashed gaussian; envs must be reset by the caller
RolloutBatch rollout(const PolicyPair& policy, VecEnv& env, int steps, Rng& action_rng);

// raw per-sequence gae; values has T+1 entries (bootstrap last)
std::pair<VecX, VecX> gae(const VecX& rewards, const VecX& values,
                          const std::vector<std::uint8_t>& dones, double gamma, double lambda);

// applies gae env by env across the time-major batch
void compute_advantages(RolloutBatch& batch, double gamma, double lambda);

// log prob of a = tanh(z) for z ~ N(mu, exp(log_std)), row-wise
VecX squashed_log_prob(const MatX& z, const MatX& mu, const Vec6& log_std);
inline constexpr double kSquashEps = 1e-8;

struct PpoDiagnostics {
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double caps_temporal = 0.0;
  double caps_spatial = 0.0;
  double clip_fraction = 0.0;
};

// terms and gradients of the actor objective on a row subset; delta holds the
// spatial perturbations for those rows; exposed so gradients can be verified
struct ActorLossResult {
  double total = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double caps_t = 0.0;
  double caps_s = 0.0;
  double clip_fraction = 0.0;
};
ActorLossResult actor_loss(const nn::MlpModel& actor, const Vec6& log_std,
                           const RolloutBatch& batch, const std::vector<Eigen::Index>& rows,
                           const VecX& adv_normalized, const MatX& delta,
                           const PpoConfig& config, nn::MlpGrad* grad_out,
                           Vec6* log_std_grad_out);

// one full clipped-surrogate update over the batch; advantages are normalized
// here (mean 0, std 1) before the epochs run
PpoDiagnostics ppo_update(PolicyPair& policy, const RolloutBatch& batch,
                          const PpoConfig& config, Rng& rng);

struct TrainResult {
  PolicyPair policy;
  TrainingCurve curve;
};

// closed-loop training; init (when given) supplies actor, critic, log_std and
// both optimizer states; meter_offset pre-charges the interaction meter
TrainResult train(const AirframeConfig& config, const nn::MlpModel& alloc_net,
                  const WrenchBox& box, const PpoConfig& ppo,
                  const PolicyPair* init, std::uint64_t seed,
                  long long meter_offset = 0);

// deterministic mean-action evaluation; cost n_envs * T interactions
double evaluate_policy(const PolicyPair& policy, const AirframeConfig& config,
                       const nn::MlpModel& alloc_net, const WrenchBox& box, int n_envs, int T,
                       std::uint64_t seed);

// mean steady-state position error over the tail of deterministic episodes
double evaluate_position_error(const PolicyPair& policy, const AirframeConfig& config,
                               const nn::MlpModel& alloc_net, const WrenchBox& box, int n_envs,
                               int T, int tail, std::uint64_t seed);

}  // namespace wrenchlab::rl
