#include "wrenchlab/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"

namespace wrenchlab::rl {

namespace {

// rng stream tags
constexpr std::uint64_t kActorInit = 0x6163746f;
constexpr std::uint64_t kCriticInit = 0x63726974;
constexpr std::uint64_t kRolloutStream = 0x726f6c6c;  // resets + action noise, per update
constexpr std::uint64_t kUpdateStream = 0x75706474;   // shuffles + spatial deltas, per update
constexpr std::uint64_t kEvalStream = 0x6576616c;     // in-training evaluations, per update

constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log sqrt(2 pi)

}  // namespace

PolicyPair make_policy(std::uint64_t seed, double init_log_std) {
  PolicyPair p;
  Rng actor_rng(mix_seed(seed, kActorInit));
  Rng critic_rng(mix_seed(seed, kCriticInit));
  p.actor = nn::make_mlp(sim::kObsDim, {32, 24}, 6, nn::Activation::tanh, nn::Squash::tanh,
                         actor_rng);
  p.critic = nn::make_mlp(sim::kObsDim, {32, 24}, 1, nn::Activation::tanh, nn::Squash::none,
                          critic_rng);
  p.log_std = Vec6::Constant(init_log_std);
  p.actor_opt = nn::make_adam(p.actor.param_count() + 6, 3e-4);
  p.critic_opt = nn::make_adam(p.critic.param_count(), 3e-4);
  return p;
}

// -- policy container serialization -- //

namespace {

constexpr std::uint32_t kPolicyMagic = 0x50504c57u;  // "WLPP"
constexpr std::uint32_t kPolicyVersion = 1;

void write_adam(io::ByteWriter& w, const nn::AdamState& st) {
  w.f64(st.lr);
  w.f64(st.beta1);
  w.f64(st.beta2);
  w.f64(st.eps);
  w.i64(st.t);
  w.u64(static_cast<std::uint64_t>(st.m.size()));
  for (Eigen::Index i = 0; i < st.m.size(); ++i) w.f64(st.m[i]);
  for (Eigen::Index i = 0; i < st.v.size(); ++i) w.f64(st.v[i]);
}

nn::AdamState read_adam(io::ByteReader& r) {
  nn::AdamState st;
  st.lr = r.f64();
  st.beta1 = r.f64();
  st.beta2 = r.f64();
  st.eps = r.f64();
  st.t = r.i64();
  const std::uint64_t n = r.u64();
  if (n > (1ull << 32)) throw CorruptPayload("bad adam state size");
  st.m.resize(static_cast<Eigen::Index>(n));
  st.v.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < st.m.size(); ++i) st.m[i] = r.f64();
  for (Eigen::Index i = 0; i < st.v.size(); ++i) st.v[i] = r.f64();
  return st;
}

}  // namespace

std::vector<std::uint8_t> serialize_policy(const PolicyPair& policy) {
  io::ByteWriter w;
  w.u32(kPolicyMagic);
  w.u32(kPolicyVersion);
  const std::vector<std::uint8_t> actor = nn::serialize(policy.actor);
  const std::vector<std::uint8_t> critic = nn::serialize(policy.critic);
  w.u32(static_cast<std::uint32_t>(actor.size()));
  w.bytes(actor.data(), actor.size());
  w.u32(static_cast<std::uint32_t>(critic.size()));
  w.bytes(critic.data(), critic.size());
  for (int k = 0; k < 6; ++k) w.f64(policy.log_std[k]);
  write_adam(w, policy.actor_opt);
  write_adam(w, policy.critic_opt);
  return w.take();
}

PolicyPair deserialize_policy(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.u32() != kPolicyMagic) throw CorruptPayload("bad policy magic");
  const std::uint32_t version = r.u32();
  if (version != kPolicyVersion)
    throw VersionMismatch("policy format version " + std::to_string(version));
  PolicyPair p;
  const std::uint32_t actor_len = r.u32();
  std::vector<std::uint8_t> actor_bytes(actor_len);
  r.bytes(actor_bytes.data(), actor_len);
  p.actor = nn::deserialize(actor_bytes);
  const std::uint32_t critic_len = r.u32();
  std::vector<std::uint8_t> critic_bytes(critic_len);
  r.bytes(critic_bytes.data(), critic_len);
  p.critic = nn::deserialize(critic_bytes);
  for (int k = 0; k < 6; ++k) p.log_std[k] = r.f64();
  p.actor_opt = read_adam(r);
  p.critic_opt = read_adam(r);
  if (!r.done()) throw CorruptPayload("trailing bytes after policy payload");
  if (p.actor_opt.m.size() != static_cast<Eigen::Index>(p.actor.param_count() + 6) ||
      p.critic_opt.m.size() != static_cast<Eigen::Index>(p.critic.param_count()))
    throw CorruptPayload("optimizer state does not match policy shapes");
  return p;
}

void save_policy(const std::filesystem::path& path, const PolicyPair& policy) {
  io::atomic_write(path, serialize_policy(policy));
}

PolicyPair load_policy(const std::filesystem::path& path) {
  return deserialize_policy(io::read_bytes(path));
}

// -- environments -- //

VecEnv::VecEnv(const AirframeConfig& config, const nn::MlpModel& alloc_net, const WrenchBox& box,
               const sim::SimParams& params, const sim::RewardConfig& reward, int n_envs)
    : model_(sim::make_sim_model(config, params)),
      alloc_net_(alloc_net),
      box_(box),
      reward_(reward),
      states_(static_cast<std::size_t>(n_envs)),
      frozen_(static_cast<std::size_t>(n_envs), 0),
      last_thrusts_(MatX::Zero(n_envs, config.n_m())) {
  if (n_envs < 1) throw ValidationError("need at least one environment");
  if (alloc_net_.input_dim() != 6 || alloc_net_.output_dim() != config.n_m())
    throw ShapeMismatch("allocation net does not match airframe");
}

void VecEnv::reset_all(Rng& rng, const sim::InitBounds& bounds) {
  for (std::size_t e = 0; e < states_.size(); ++e) {
    states_[e] = sim::sample_initial_state(rng, bounds);
    frozen_[e] = 0;
  }
}

void VecEnv::reset_one(int e, Rng& rng, const sim::InitBounds& bounds) {
  states_[static_cast<std::size_t>(e)] = sim::sample_initial_state(rng, bounds);
  frozen_[static_cast<std::size_t>(e)] = 0;
}

MatX VecEnv::observe(Rng* noise_rng) const {
  MatX obs(n_envs(), sim::kObsDim);
  for (int e = 0; e < n_envs(); ++e)
    obs.row(e) =
        sim::observe(states_[static_cast<std::size_t>(e)], Vec3::Zero(), model_.params, noise_rng)
            .transpose();
  // fixed feature scaling so velocity and rate channels match the unit-scale
  // position/attitude channels; keeps the first tanh layer out of saturation
  obs.middleCols(3, 3) *= kVelScale;
  obs.middleCols(12, 3) *= kOmegaScale;
  return obs;
}

void VecEnv::step(const MatX& actions, VecX& rewards, std::vector<std::uint8_t>& dones,
                  const MatX* u_noise) {
  const int ne = n_envs();
  const int nm = n_m();
  if (actions.rows() != ne || actions.cols() != 6) throw ShapeMismatch("action batch shape");
  if (u_noise && (u_noise->rows() != ne || u_noise->cols() != nm))
    throw ShapeMismatch("allocation noise shape");
  rewards.resize(ne);
  dones.assign(static_cast<std::size_t>(ne), 0);

  // allocation net maps normalized commands straight to normalized thrusts
  MatX u_norm = nn::forward_fast(alloc_net_, actions, nullptr);
  if (u_noise) u_norm += *u_noise;
  const double range = model_.config.u_max - model_.config.u_min;

  for (int e = 0; e < ne; ++e) {
    if (frozen_[static_cast<std::size_t>(e)]) {
      rewards[e] = 0.0;
      dones[static_cast<std::size_t>(e)] = 1;
      continue;
    }
    VecX u(nm);
    for (int k = 0; k < nm; ++k)
      u[k] = model_.config.u_min + range * u_norm(e, k);
    u = u.cwiseMax(model_.config.u_min).cwiseMin(model_.config.u_max);
    last_thrusts_.row(e) = u.transpose();
    const sim::StepResult res = sim::step(model_, states_[static_cast<std::size_t>(e)], u);
    states_[static_cast<std::size_t>(e)] = res.next;
    if (res.crashed) {
      rewards[e] = 0.0;
      dones[static_cast<std::size_t>(e)] = 1;
      frozen_[static_cast<std::size_t>(e)] = 1;
    } else {
      rewards[e] = sim::compute_reward(res.next, u, reward_);
    }
  }
}

// -- rollout and gae -- //

VecX squashed_log_prob(const MatX& z, const MatX& mu, const Vec6& log_std) {
  if (z.rows() != mu.rows() || z.cols() != 6 || mu.cols() != 6)
    throw ShapeMismatch("log prob batch shape");
  VecX out(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double acc = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double sigma = std::exp(log_std[k]);
      const double u = (z(i, k) - mu(i, k)) / sigma;
      acc += -0.5 * u * u - log_std[k] - kLogSqrt2Pi;
      const double th = std::tanh(z(i, k));
      acc -= std::log(1.0 - th * th + kSquashEps);
    }
    out[i] = acc;
  }
  return out;
}

RolloutBatch rollout(const PolicyPair& policy, VecEnv& env, int steps, Rng& rng) {
  const int E = env.n_envs();
  const int T = steps;
  RolloutBatch b;
  b.T = T;
  b.E = E;
  const Eigen::Index n = static_cast<Eigen::Index>(T) * E;
  b.obs.resize(n, sim::kObsDim);
  b.z.resize(n, 6);
  b.logp.resize(n);
  b.rewards.resize(n);
  b.values.resize(n);
  b.dones.assign(static_cast<std::size_t>(n), 0);
  b.obs_next.resize(n, sim::kObsDim);
  b.next_ok.assign(static_cast<std::size_t>(n), 0);
  b.interactions = static_cast<long long>(T) * E;
  if (T == 0) {
    b.bootstrap = VecX::Zero(E);
    return b;
  }

  MatX obs = env.observe();
  VecX rewards;
  std::vector<std::uint8_t> dones;
  for (int t = 0; t < T; ++t) {
    nn::ForwardCache cache;
    nn::forward_fast(policy.actor, obs, &cache);
    const MatX& mu = cache.presquash;
    MatX z(E, 6), actions(E, 6);
    for (int e = 0; e < E; ++e)
      for (int k = 0; k < 6; ++k) {
        const double sigma = std::exp(policy.log_std[k]);
        z(e, k) = mu(e, k) + sigma * rng.normal();
        actions(e, k) = std::tanh(z(e, k));
      }
    const MatX values = nn::forward_fast(policy.critic, obs, nullptr);
    const VecX logp = squashed_log_prob(z, mu, policy.log_std);

    env.step(actions, rewards, dones);

    const Eigen::Index base = static_cast<Eigen::Index>(t) * E;
    for (int e = 0; e < E; ++e) {
      const Eigen::Index row = base + e;
      b.obs.row(row) = obs.row(e);
      b.z.row(row) = z.row(e);
      b.logp[row] = logp[e];
      b.values[row] = values(e, 0);
      b.rewards[row] = rewards[e];
      b.dones[static_cast<std::size_t>(row)] = dones[static_cast<std::size_t>(e)];
    }
    // crashed envs restart immediately; the pair across the reset is not smooth
    for (int e = 0; e < E; ++e)
      if (dones[static_cast<std::size_t>(e)]) env.reset_one(e, rng);
    obs = env.observe();
    for (int e = 0; e < E; ++e) {
      const Eigen::Index row = base + e;
      b.obs_next.row(row) = obs.row(e);
      b.next_ok[static_cast<std::size_t>(row)] = dones[static_cast<std::size_t>(e)] ? 0 : 1;
    }
  }
  const MatX tail_values = nn::forward_fast(policy.critic, obs, nullptr);
  b.bootstrap = tail_values.col(0);
  return b;
}

std::pair<VecX, VecX> gae(const VecX& rewards, const VecX& values,
                          const std::vector<std::uint8_t>& dones, double gamma, double lambda) {
  const Eigen::Index t_len = rewards.size();
  if (values.size() != t_len + 1 || static_cast<Eigen::Index>(dones.size()) != t_len)
    throw ShapeMismatch("gae sequence lengths disagree");
  VecX adv(t_len), ret(t_len);
  double acc = 0.0;
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    const double nonterminal = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta =
        rewards[t] + gamma * values[t + 1] * nonterminal - values[t];
    acc = delta + gamma * lambda * nonterminal * acc;
    adv[t] = acc;
    ret[t] = adv[t] + values[t];
  }
  return {adv, ret};
}

void compute_advantages(RolloutBatch& batch, double gamma, double lambda) {
  const int T = batch.T, E = batch.E;
  batch.adv.resize(batch.values.size());
  batch.ret.resize(batch.values.size());
  VecX seq_r(T), seq_v(T + 1);
  std::vector<std::uint8_t> seq_d(static_cast<std::size_t>(T));
  for (int e = 0; e < E; ++e) {
    for (int t = 0; t < T; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(t) * E + e;
      seq_r[t] = batch.rewards[row];
      seq_v[t] = batch.values[row];
      seq_d[static_cast<std::size_t>(t)] = batch.dones[static_cast<std::size_t>(row)];
    }
    seq_v[T] = batch.bootstrap[e];
    const auto [adv, ret] = gae(seq_r, seq_v, seq_d, gamma, lambda);
    for (int t = 0; t < T; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(t) * E + e;
      batch.adv[row] = adv[t];
      batch.ret[row] = ret[t];
    }
  }
}

// -- ppo losses -- //

ActorLossResult actor_loss(const nn::MlpModel& actor, const Vec6& log_std,
                           const RolloutBatch& batch, const std::vector<Eigen::Index>& rows,
                           const VecX& adv_normalized, const MatX& delta,
                           const PpoConfig& config, nn::MlpGrad* grad_out,
                           Vec6* log_std_grad_out) {
  const Eigen::Index nb = static_cast<Eigen::Index>(rows.size());
  if (nb == 0) throw ValidationError("empty minibatch");
  if (delta.rows() != nb || delta.cols() != sim::kObsDim)
    throw ShapeMismatch("spatial perturbation shape");

  MatX obs(nb, sim::kObsDim), z(nb, 6), obs_next(nb, sim::kObsDim), obs_pert(nb, sim::kObsDim);
  VecX logp_old(nb), adv(nb);
  std::vector<std::uint8_t> pair_ok(static_cast<std::size_t>(nb));
  Eigen::Index n_pairs = 0;
  for (Eigen::Index i = 0; i < nb; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    obs.row(i) = batch.obs.row(r);
    z.row(i) = batch.z.row(r);
    obs_next.row(i) = batch.obs_next.row(r);
    logp_old[i] = batch.logp[r];
    adv[i] = adv_normalized[r];
    pair_ok[static_cast<std::size_t>(i)] = batch.next_ok[static_cast<std::size_t>(r)];
    if (pair_ok[static_cast<std::size_t>(i)]) ++n_pairs;
  }
  obs_pert = obs + delta;

  nn::ForwardCache cache, cache_next, cache_pert;
  nn::forward_fast(actor, obs, &cache);
  const MatX& mu = cache.presquash;
  const bool want_t = config.caps_temporal > 0.0 && n_pairs > 0;
  const bool want_s = config.caps_spatial > 0.0;
  if (want_t) nn::forward_fast(actor, obs_next, &cache_next);
  if (want_s) nn::forward_fast(actor, obs_pert, &cache_pert);

  ActorLossResult res;
  MatX dmu = MatX::Zero(nb, 6);
  Vec6 dlogstd = Vec6::Zero();
  Eigen::Index clipped = 0;

  const VecX logp_new = squashed_log_prob(z, mu, log_std);
  for (Eigen::Index i = 0; i < nb; ++i) {
    const double ratio = std::exp(logp_new[i] - logp_old[i]);
    const double a = adv[i];
    const double clamped = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    const double f1 = ratio * a;
    const double f2 = clamped * a;
    res.surrogate += -std::min(f1, f2) / static_cast<double>(nb);
    double dl_dratio = 0.0;
    if (f1 <= f2) {
      dl_dratio = -a / static_cast<double>(nb);
    } else if (ratio > 1.0 - config.clip && ratio < 1.0 + config.clip) {
      dl_dratio = -a / static_cast<double>(nb);
    } else {
      ++clipped;
    }
    if (dl_dratio != 0.0) {
      // dratio/dmu_k = ratio * (z - mu)/sigma^2 ; dratio/dlogstd_k = ratio * (u^2 - 1)
      for (int k = 0; k < 6; ++k) {
        const double sigma = std::exp(log_std[k]);
        const double u = (z(i, k) - mu(i, k)) / sigma;
        dmu(i, k) += dl_dratio * ratio * u / sigma;
        dlogstd[k] += dl_dratio * ratio * (u * u - 1.0);
      }
    }
  }
  res.clip_fraction = static_cast<double>(clipped) / static_cast<double>(nb);

  // gaussian entropy in pre-squash space, constant per row
  double ent = 0.0;
  for (int k = 0; k < 6; ++k) ent += log_std[k] + 0.5 + kLogSqrt2Pi;
  res.entropy = ent;
  for (int k = 0; k < 6; ++k) dlogstd[k] += -config.entropy_coef;

  MatX dmu_next, dmu_pert;
  if (want_t) {
    dmu_next = MatX::Zero(nb, 6);
    const double w = config.caps_temporal / static_cast<double>(n_pairs);
    for (Eigen::Index i = 0; i < nb; ++i) {
      if (!pair_ok[static_cast<std::size_t>(i)]) continue;
      for (int k = 0; k < 6; ++k) {
        const double d = mu(i, k) - cache_next.presquash(i, k);
        res.caps_t += w * d * d;
        dmu(i, k) += 2.0 * w * d;
        dmu_next(i, k) -= 2.0 * w * d;
      }
    }
  }
  if (want_s) {
    dmu_pert = MatX::Zero(nb, 6);
    const double w = config.caps_spatial / static_cast<double>(nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
      for (int k = 0; k < 6; ++k) {
        const double d = mu(i, k) - cache_pert.presquash(i, k);
        res.caps_s += w * d * d;
        dmu(i, k) += 2.0 * w * d;
        dmu_pert(i, k) -= 2.0 * w * d;
      }
    }
  }

  res.total = res.surrogate - config.entropy_coef * res.entropy + res.caps_t + res.caps_s;

  if (grad_out) {
    nn::MlpGrad grad = nn::backward_presquash(actor, cache, dmu);
    if (want_t) nn::accumulate(grad, nn::backward_presquash(actor, cache_next, dmu_next));
    if (want_s) nn::accumulate(grad, nn::backward_presquash(actor, cache_pert, dmu_pert));
    *grad_out = std::move(grad);
  }
  if (log_std_grad_out) *log_std_grad_out = dlogstd;
  return res;
}

namespace {

VecX pack_actor(const PolicyPair& policy) {
  const VecX base = nn::pack(policy.actor);
  VecX flat(base.size() + 6);
  flat.head(base.size()) = base;
  flat.tail(6) = policy.log_std;
  return flat;
}

void unpack_actor(PolicyPair& policy, const VecX& flat) {
  nn::unpack(policy.actor, flat.head(flat.size() - 6));
  policy.log_std = flat.tail(6);
}

}  // namespace

PpoDiagnostics ppo_update(PolicyPair& policy, const RolloutBatch& batch, const PpoConfig& config,
                          Rng& rng) {
  const Eigen::Index n = batch.obs.rows();
  if (n == 0) throw ValidationError("empty rollout batch");
  if (batch.adv.size() != n) throw ValidationError("advantages not computed");

  // per-update normalization
  const double mean = batch.adv.mean();
  const double var = (batch.adv.array() - mean).square().mean();
  const double std = std::sqrt(var);
  const VecX adv_norm = ((batch.adv.array() - mean) / (std + 1e-8)).matrix();

  PpoDiagnostics diag;
  int n_minibatches = 0;
  const Vec6 scheduled_log_std = policy.log_std;

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = perm.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_index(i);
      std::swap(perm[i - 1], perm[j]);
    }
    for (Eigen::Index start = 0; start < n; start += config.minibatch) {
      const Eigen::Index nb = std::min<Eigen::Index>(config.minibatch, n - start);
      std::vector<Eigen::Index> rows(perm.begin() + start, perm.begin() + start + nb);

      MatX delta(nb, sim::kObsDim);
      for (Eigen::Index i = 0; i < nb; ++i)
        for (int k = 0; k < sim::kObsDim; ++k)
          delta(i, k) = config.caps_sigma * rng.normal();

      nn::MlpGrad actor_grad;
      Vec6 logstd_grad;
      const ActorLossResult al = actor_loss(policy.actor, policy.log_std, batch, rows, adv_norm,
                                            delta, config, &actor_grad, &logstd_grad);
      if (!std::isfinite(al.total)) throw Diverged("actor loss is non-finite");

      VecX flat = pack_actor(policy);
      VecX flat_grad(flat.size());
      flat_grad.head(flat.size() - 6) = nn::pack_grad(policy.actor, actor_grad);
      flat_grad.tail(6) = logstd_grad;
      if (config.log_std_anneal_updates > 0) flat_grad.tail(6).setZero();
      policy.actor_opt.lr = config.lr_actor;
      nn::adam_step(flat, policy.actor_opt, flat_grad);
      unpack_actor(policy, flat);
      // scheduled exploration keeps log_std pinned to the ramp value
      if (config.log_std_anneal_updates > 0) policy.log_std = scheduled_log_std;

      // critic regression to the gae returns
      MatX obs(nb, sim::kObsDim);
      VecX ret(nb);
      for (Eigen::Index i = 0; i < nb; ++i) {
        obs.row(i) = batch.obs.row(rows[static_cast<std::size_t>(i)]);
        ret[i] = batch.ret[rows[static_cast<std::size_t>(i)]];
      }
      nn::ForwardCache vcache;
      const MatX v = nn::forward_fast(policy.critic, obs, &vcache);
      const VecX verr = v.col(0) - ret;
      const double vloss = config.value_coef * verr.squaredNorm() / static_cast<double>(nb);
      if (!std::isfinite(vloss)) throw Diverged("value loss is non-finite");
      MatX dv(nb, 1);
      dv.col(0) = (2.0 * config.value_coef / static_cast<double>(nb)) * verr;
      const nn::MlpGrad critic_grad = nn::backward(policy.critic, vcache, dv);
      policy.critic_opt.lr = config.lr_critic;
      nn::adam_step(policy.critic, policy.critic_opt, critic_grad);

      diag.actor_loss += al.total;
      diag.value_loss += vloss;
      diag.entropy += al.entropy;
      diag.caps_temporal += al.caps_t;
      diag.caps_spatial += al.caps_s;
      diag.clip_fraction += al.clip_fraction;
      ++n_minibatches;
    }
  }
  const double inv = 1.0 / std::max(1, n_minibatches);
  diag.actor_loss *= inv;
  diag.value_loss *= inv;
  diag.entropy *= inv;
  diag.caps_temporal *= inv;
  diag.caps_spatial *= inv;
  diag.clip_fraction *= inv;
  return diag;
}

// -- evaluation -- //

namespace {

constexpr std::uint64_t kEvalInit = 0x65696e69;

struct EvalRun {
  double mean_reward = 0.0;
  double mean_tail_pos_error = 0.0;
};

EvalRun run_eval(const PolicyPair& policy, const AirframeConfig& config,
                 const nn::MlpModel& alloc_net, const WrenchBox& box, int n_envs, int T, int tail,
                 std::uint64_t seed) {
  sim::SimParams params;  // low fidelity, deterministic
  sim::RewardConfig rc;
  rc.mode = sim::RewardMode::position_only;
  VecEnv env(config, alloc_net, box, params, rc, n_envs);
  Rng rng(mix_seed(seed, kEvalInit));
  env.reset_all(rng);

  VecX total = VecX::Zero(n_envs);
  VecX rewards;
  std::vector<std::uint8_t> dones;
  VecX tail_err = VecX::Zero(n_envs);
  int tail_count = 0;
  for (int t = 0; t < T; ++t) {
    const MatX obs = env.observe();
    const MatX actions = nn::forward_fast(policy.actor, obs, nullptr);  // squashed mean
    env.step(actions, rewards, dones);
    total += rewards;
    if (t >= T - tail) {
      for (int e = 0; e < n_envs; ++e)
        tail_err[e] += env.states()[static_cast<std::size_t>(e)].p.norm();
      ++tail_count;
    }
  }
  EvalRun out;
  out.mean_reward = T > 0 ? total.mean() : 0.0;
  if (tail_count > 0) out.mean_tail_pos_error = tail_err.mean() / tail_count;
  return out;
}

}  // namespace

double evaluate_policy(const PolicyPair& policy, const AirframeConfig& config,
                       const nn::MlpModel& alloc_net, const WrenchBox& box, int n_envs, int T,
                       std::uint64_t seed) {
  if (n_envs < 1 || T < 0) throw ValidationError("evaluation needs n_envs >= 1 and T >= 0");
  if (T == 0) return 0.0;
  return run_eval(policy, config, alloc_net, box, n_envs, T, 0, seed).mean_reward;
}

double evaluate_position_error(const PolicyPair& policy, const AirframeConfig& config,
                               const nn::MlpModel& alloc_net, const WrenchBox& box, int n_envs,
                               int T, int tail, std::uint64_t seed) {
  if (n_envs < 1 || T < 1 || tail < 1 || tail > T)
    throw ValidationError("bad position error evaluation window");
  return run_eval(policy, config, alloc_net, box, n_envs, T, tail, seed).mean_tail_pos_error;
}

// -- training -- //

TrainResult train(const AirframeConfig& config, const nn::MlpModel& alloc_net,
                  const WrenchBox& box, const PpoConfig& ppo, const PolicyPair* init,
                  std::uint64_t seed, long long meter_offset) {
  const auto t_start = std::chrono::steady_clock::now();
  config.validate();

  sim::SimParams params;  // training always runs the low-fidelity loop
  sim::RewardConfig rc = sim::make_reward_config(config, sim::RewardMode::position_only);
  VecEnv env(config, alloc_net, box, params, rc, ppo.n_envs);

  TrainResult out;
  out.policy = init ? *init : make_policy(seed, ppo.init_log_std);
  out.curve.seed = seed;
  PolicyPair& policy = out.policy;

  const Eigen::Index batch_rows = static_cast<Eigen::Index>(ppo.rollout_len) * ppo.n_envs;
  const long long steps_per_update =
      static_cast<long long>(ppo.epochs) *
      ((batch_rows + ppo.minibatch - 1) / ppo.minibatch);

  long long meter = meter_offset;
  std::vector<double> evals;
  const long long rollout_cost = static_cast<long long>(ppo.rollout_len) * ppo.n_envs;
  const long long eval_cost = static_cast<long long>(ppo.eval_envs) * ppo.eval_steps;

  auto update_index = [&]() { return policy.actor_opt.t / steps_per_update; };
  auto apply_log_std_schedule = [&](long long update) {
    if (ppo.log_std_anneal_updates <= 0) return;
    const double f = std::min(1.0, static_cast<double>(update) / ppo.log_std_anneal_updates);
    policy.log_std = Vec6::Constant(ppo.init_log_std + f * (ppo.final_log_std - ppo.init_log_std));
  };

  while (true) {
    const long long update = update_index();
    apply_log_std_schedule(update);
    if (update % ppo.eval_every == 0) {
      const double r = evaluate_policy(policy, config, alloc_net, box, ppo.eval_envs,
                                       ppo.eval_steps, mix_seed(seed, kEvalStream,
                                                                static_cast<std::uint64_t>(update)));
      meter += eval_cost;
      out.curve.points.emplace_back(meter, r);
      evals.push_back(r);
      if (ppo.goal_reward) {
        const int win = std::min<int>(ppo.goal_window, static_cast<int>(evals.size()));
        double acc = 0.0;
        for (int i = 0; i < win; ++i) acc += evals[evals.size() - 1 - static_cast<std::size_t>(i)];
        if (acc / win >= *ppo.goal_reward) {
          out.curve.terminated_reason = "goal";
          break;
        }
      }
    }
    if (meter + rollout_cost > ppo.max_interactions) {
      out.curve.terminated_reason = "budget";
      break;
    }

    Rng roll_rng(mix_seed(seed, kRolloutStream, static_cast<std::uint64_t>(update)));
    env.reset_all(roll_rng);
    RolloutBatch batch = rollout(policy, env, ppo.rollout_len, roll_rng);
    meter += batch.interactions;
    compute_advantages(batch, ppo.gamma, ppo.lambda);

    Rng update_rng(mix_seed(seed, kUpdateStream, static_cast<std::uint64_t>(update)));
    ppo_update(policy, batch, ppo, update_rng);
  }

  // make sure the curve ends with a fresh reading
  if (out.curve.points.empty() || out.curve.points.back().first < meter) {
    const long long update = update_index();
    const double r = evaluate_policy(policy, config, alloc_net, box, ppo.eval_envs,
                                     ppo.eval_steps, mix_seed(seed, kEvalStream,
                                                              static_cast<std::uint64_t>(update)));
    meter += eval_cost;
    out.curve.points.emplace_back(meter, r);
  }

  out.curve.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

// -- curve csv -- //

std::string curve_to_csv(const TrainingCurve& curve) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "interactions,reward\n";
  for (const auto& [n, r] : curve.points) ss << n << ',' << r << '\n';
  return ss.str();
}

TrainingCurve curve_from_csv(const std::string& text) {
  TrainingCurve curve;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw CorruptPayload("empty curve csv");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw CorruptPayload("bad curve csv row: " + line);
    curve.points.emplace_back(std::stoll(line.substr(0, comma)),
                              std::stod(line.substr(comma + 1)));
  }
  return curve;
}

}  // namespace wrenchlab::rl
