#include "wrenchlab/alloc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"
#include "wrenchlab/rng.hpp"

namespace wrenchlab::alloc {

namespace {

constexpr int kMaxFistaIters = 2000;
constexpr int kMaxPolishRounds = 10;
constexpr double kKktTol = 1e-8;

// rng stream tags
constexpr std::uint64_t kDatasetStream = 0x64617461;   // dataset sampling
constexpr std::uint64_t kEvalStream = 0x6576616c;      // fresh evaluation samples
constexpr std::uint64_t kInitStream = 0x696e6974;      // net init
constexpr std::uint64_t kShuffleStream = 0x73687566;   // per-epoch shuffles

// shared per-(F, rho) state for many right-hand sides
struct QpContext {
  MatX h;                 // 2 (I + rho F^T F)
  Eigen::LDLT<MatX> ldlt; // of h
  MatX ft;                // F^T
  double lip;             // largest eigenvalue of h
  double rho;
  double u_min, u_max;
  int n;
};

QpContext make_context(const AllocationMatrix& f, double u_min, double u_max, double rho) {
  if (!(u_min < u_max)) throw ValidationError("qp needs u_min < u_max");
  QpContext ctx;
  ctx.n = static_cast<int>(f.cols());
  ctx.ft = f.transpose();
  ctx.h = 2.0 * (MatX::Identity(ctx.n, ctx.n) + rho * ctx.ft * f);
  ctx.ldlt.compute(ctx.h);
  Eigen::SelfAdjointEigenSolver<MatX> es(ctx.h);
  ctx.lip = es.eigenvalues().maxCoeff();
  ctx.rho = rho;
  ctx.u_min = u_min;
  ctx.u_max = u_max;
  return ctx;
}

VecX clamp_box(const VecX& u, double lo, double hi) {
  return u.cwiseMax(lo).cwiseMin(hi);
}

double natural_residual(const QpContext& ctx, const VecX& u, const VecX& g0) {
  const VecX grad = ctx.h * u + g0;
  return (u - clamp_box(u - grad, ctx.u_min, ctx.u_max)).cwiseAbs().maxCoeff();
}

// fix near-bound coordinates with the right gradient sign, solve the free block
bool polish_round(const QpContext& ctx, VecX& u, const VecX& g0) {
  const double act_tol = 1e-7 * (ctx.u_max - ctx.u_min);
  const VecX grad = ctx.h * u + g0;
  std::vector<int> free_idx;
  for (int i = 0; i < ctx.n; ++i) {
    const bool lo = u[i] - ctx.u_min <= act_tol && grad[i] >= 0.0;
    const bool hi = ctx.u_max - u[i] <= act_tol && grad[i] <= 0.0;
    if (lo)
      u[i] = ctx.u_min;
    else if (hi)
      u[i] = ctx.u_max;
    else
      free_idx.push_back(i);
  }
  const int nf = static_cast<int>(free_idx.size());
  if (nf == 0) return false;
  MatX hff(nf, nf);
  VecX rhs(nf);
  for (int a = 0; a < nf; ++a) {
    rhs[a] = -g0[free_idx[static_cast<std::size_t>(a)]];
    for (int b = 0; b < nf; ++b)
      hff(a, b) = ctx.h(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
  }
  // move fixed contributions to the right-hand side
  for (int a = 0; a < nf; ++a) {
    const int i = free_idx[static_cast<std::size_t>(a)];
    double acc = 0.0;
    for (int j = 0; j < ctx.n; ++j) {
      if (std::find(free_idx.begin(), free_idx.end(), j) == free_idx.end())
        acc += ctx.h(i, j) * u[j];
    }
    rhs[a] -= acc;
  }
  Eigen::LDLT<MatX> ldlt(hff);
  VecX x = ldlt.solve(rhs);
  x += ldlt.solve(rhs - hff * x);  // one refinement pass
  for (int a = 0; a < nf; ++a)
    u[free_idx[static_cast<std::size_t>(a)]] =
        std::clamp(x[a], ctx.u_min, ctx.u_max);
  return true;
}

AllocationSolution solve_one(const QpContext& ctx, const Vec6& w_d) {
  AllocationSolution sol;
  const VecX g0 = -2.0 * ctx.rho * (ctx.ft * w_d);

  // warm start at the clamped unconstrained stationary point
  VecX u = clamp_box(ctx.ldlt.solve(-g0), ctx.u_min, ctx.u_max);
  double best_res = natural_residual(ctx, u, g0);
  VecX best_u = u;
  int iters = 0;

  if (best_res > kKktTol) {
    VecX y = u, u_prev = u;
    double t = 1.0;
    for (; iters < kMaxFistaIters; ++iters) {
      const VecX grad = ctx.h * y + g0;
      const VecX u_next = clamp_box(y - grad / ctx.lip, ctx.u_min, ctx.u_max);
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = u_next + ((t - 1.0) / t_next) * (u_next - u_prev);
      u_prev = u_next;
      t = t_next;
      u = u_next;
      if (iters % 8 == 7) {
        const double res = natural_residual(ctx, u, g0);
        if (res < best_res) {
          best_res = res;
          best_u = u;
        }
        if (res <= kKktTol) break;
      }
    }
  }

  u = best_u;
  for (int round = 0; round < kMaxPolishRounds && best_res > kKktTol; ++round) {
    if (!polish_round(ctx, u, g0)) break;
    const double res = natural_residual(ctx, u, g0);
    if (res < best_res) {
      best_res = res;
      best_u = u;
    } else {
      break;
    }
  }

  sol.u = best_u;
  sol.kkt_residual = natural_residual(ctx, best_u, g0);
  sol.iterations = iters;
  sol.converged = sol.kkt_residual <= kKktTol;
  return sol;
}

}  // namespace

const char* mode_name(AllocMode mode) {
  return mode == AllocMode::unconstrained ? "unconstrained" : "constrained";
}

AllocationSolution solve_allocation_qp(const AllocationMatrix& f, const Vec6& w_d,
                                       double u_min, double u_max, double rho) {
  const QpContext ctx = make_context(f, u_min, u_max, rho);
  AllocationSolution sol = solve_one(ctx, w_d);
  sol.s = f * sol.u - w_d;
  return sol;
}

std::vector<AllocationSolution> solve_allocation_qp_batch(const AllocationMatrix& f,
                                                          const std::vector<Vec6>& w_d,
                                                          double u_min, double u_max,
                                                          double rho) {
  const QpContext ctx = make_context(f, u_min, u_max, rho);
  std::vector<AllocationSolution> out;
  out.reserve(w_d.size());
  for (const Vec6& w : w_d) {
    AllocationSolution sol = solve_one(ctx, w);
    sol.s = f * sol.u - w;
    out.push_back(std::move(sol));
  }
  return out;
}

MatX pseudo_inverse(const AllocationMatrix& f) {
  Eigen::JacobiSVD<MatX> svd(f, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX& sv = svd.singularValues();
  const double cutoff = 1e-10 * sv.maxCoeff();
  VecX inv = VecX::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) inv[i] = 1.0 / sv[i];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

VecX solve_unconstrained(const AllocationMatrix& f, const Vec6& w_d) {
  return pseudo_inverse(f) * w_d;
}

AllocationDataset generate_dataset(const AirframeConfig& config, const WrenchBox& box,
                                   AllocMode mode, int n, std::uint64_t seed, double rho) {
  if (n < 1) throw ValidationError("dataset size must be >= 1");
  const AllocationMatrix f = build_allocation_matrix(config);
  const int n_m = config.n_m();
  const double range = config.u_max - config.u_min;

  AllocationDataset ds;
  ds.inputs.resize(n, 6);
  ds.labels.resize(n, n_m);
  ds.config_hash = config_hash(config);
  ds.seed = seed;
  ds.mode = mode;

  Rng rng(mix_seed(seed, kDatasetStream));
  const MatX pinv = mode == AllocMode::unconstrained ? pseudo_inverse(f) : MatX();
  QpContext ctx;
  if (mode == AllocMode::constrained) ctx = make_context(f, config.u_min, config.u_max, rho);

  for (int i = 0; i < n; ++i) {
    Vec6 a;
    for (int k = 0; k < 6; ++k) a[k] = rng.uniform(-1.0, 1.0);
    ds.inputs.row(i) = a.transpose();
    const Vec6 w = command_to_wrench(box, a);
    VecX u;
    if (mode == AllocMode::unconstrained) {
      u = pinv * w;
    } else {
      AllocationSolution sol = solve_one(ctx, w);
      if (!sol.converged) ++ds.qp_failures;
      u = std::move(sol.u);
    }
    ds.labels.row(i) = ((u.array() - config.u_min) / range).transpose();
  }
  return ds;
}

namespace {
constexpr std::uint32_t kDatasetMagic = 0x53444c57u;  // "WLDS"
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const std::filesystem::path& path, const AllocationDataset& ds) {
  io::ByteWriter w;
  w.u32(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(ds.config_hash);
  w.u64(ds.seed);
  w.u8(static_cast<std::uint8_t>(ds.mode));
  w.u32(static_cast<std::uint32_t>(ds.qp_failures));
  w.u32(static_cast<std::uint32_t>(ds.inputs.rows()));
  w.u32(static_cast<std::uint32_t>(ds.labels.cols()));
  for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i) {
    for (Eigen::Index k = 0; k < 6; ++k) w.f64(ds.inputs(i, k));
    for (Eigen::Index k = 0; k < ds.labels.cols(); ++k) w.f64(ds.labels(i, k));
  }
  io::atomic_write(path, w.data());
}

AllocationDataset load_dataset(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = io::read_bytes(path);
  io::ByteReader r(bytes);
  if (r.u32() != kDatasetMagic) throw CorruptPayload("bad dataset magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw VersionMismatch("dataset format version " + std::to_string(version));
  AllocationDataset ds;
  ds.config_hash = r.u64();
  ds.seed = r.u64();
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw CorruptPayload("bad dataset mode tag");
  ds.mode = static_cast<AllocMode>(mode);
  ds.qp_failures = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  const std::uint32_t n_m = r.u32();
  if (n_m != 4 && n_m != 6) throw CorruptPayload("bad dataset motor count");
  ds.inputs.resize(n, 6);
  ds.labels.resize(n, n_m);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < 6; ++k) ds.inputs(i, k) = r.f64();
    for (std::uint32_t k = 0; k < n_m; ++k) ds.labels(i, k) = r.f64();
  }
  if (!r.done()) throw CorruptPayload("trailing bytes after dataset payload");
  return ds;
}

namespace {

double mse(const nn::MlpModel& model, const MatX& x, const MatX& y) {
  const MatX pred = nn::forward_fast(model, x, nullptr);
  return (pred - y).array().square().mean();
}

}  // namespace

TrainResult train_allocation_net(const AllocationDataset& ds, AllocMode mode,
                                 std::uint64_t seed, const TrainOptions& opts) {
  if (ds.size() < 2) throw ValidationError("dataset too small to split");
  const int n_m = static_cast<int>(ds.labels.cols());

  Rng init_rng(mix_seed(seed, kInitStream));
  nn::MlpModel model =
      mode == AllocMode::unconstrained
          ? nn::make_mlp(6, {32}, n_m, nn::Activation::linear, nn::Squash::none, init_rng)
          : nn::make_mlp(6, {100, 100, 100}, n_m, nn::Activation::leaky_relu,
                         nn::Squash::none, init_rng);

  const Eigen::Index n = ds.size();
  const Eigen::Index n_val = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::lround(opts.val_fraction * static_cast<double>(n))));
  const Eigen::Index n_train = n - n_val;
  if (n_train < 1) throw ValidationError("dataset too small to split");
  const MatX x_train = ds.inputs.topRows(n_train);
  const MatX y_train = ds.labels.topRows(n_train);
  const MatX x_val = ds.inputs.bottomRows(n_val);
  const MatX y_val = ds.labels.bottomRows(n_val);

  VecX params = nn::pack(model);
  nn::AdamState adam = nn::make_adam(static_cast<std::size_t>(params.size()), opts.lr);

  TrainResult result;
  result.log.train_loss.reserve(static_cast<std::size_t>(opts.max_epochs));
  result.log.val_loss.reserve(static_cast<std::size_t>(opts.max_epochs));

  double best_val = std::numeric_limits<double>::infinity();
  VecX best_params = params;
  int wait = 0;

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n_train));
  for (Eigen::Index i = 0; i < n_train; ++i) perm[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    // fisher-yates
    for (std::size_t i = perm.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_index(i);
      std::swap(perm[i - 1], perm[j]);
    }

    double train_acc = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n_train; start += opts.minibatch) {
      const Eigen::Index b = std::min<Eigen::Index>(opts.minibatch, n_train - start);
      MatX xb(b, 6), yb(b, n_m);
      for (Eigen::Index i = 0; i < b; ++i) {
        const Eigen::Index src = perm[static_cast<std::size_t>(start + i)];
        xb.row(i) = x_train.row(src);
        yb.row(i) = y_train.row(src);
      }
      nn::ForwardCache cache;
      const MatX pred = nn::forward_fast(model, xb, &cache);
      const MatX diff = pred - yb;
      const double loss = diff.array().square().mean();
      if (!std::isfinite(loss)) throw Diverged("allocation training loss is non-finite");
      train_acc += loss * static_cast<double>(b);
      seen += b;
      const MatX dout = (2.0 / static_cast<double>(diff.size())) * diff;
      const nn::MlpGrad grad = nn::backward(model, cache, dout);
      nn::adam_step(model, adam, grad);
    }
    const double train_loss = train_acc / static_cast<double>(seen);
    const double val_loss = mse(model, x_val, y_val);
    if (!std::isfinite(val_loss)) throw Diverged("allocation validation loss is non-finite");
    result.log.train_loss.push_back(train_loss);
    result.log.val_loss.push_back(val_loss);
    result.log.epochs = epoch + 1;

    if (val_loss < best_val - 1e-14) {
      best_val = val_loss;
      best_params = nn::pack(model);
      wait = 0;
    } else if (++wait >= opts.patience) {
      result.log.plateaued = true;
      break;
    }
  }

  nn::unpack(model, best_params);
  result.model = std::move(model);
  return result;
}

AllocError evaluate_allocation_error(const nn::MlpModel& model, const AirframeConfig& config,
                                     const WrenchBox& box, AllocMode mode, int n,
                                     std::uint64_t seed, double rho) {
  if (n < 1) throw ValidationError("evaluation sample count must be >= 1");
  const AllocationMatrix f = build_allocation_matrix(config);
  const int n_m = config.n_m();
  const double range = config.u_max - config.u_min;

  Rng rng(mix_seed(seed, kEvalStream));
  const MatX pinv = mode == AllocMode::unconstrained ? pseudo_inverse(f) : MatX();
  QpContext ctx;
  if (mode == AllocMode::constrained) ctx = make_context(f, config.u_min, config.u_max, rho);

  AllocError err;
  double acc = 0.0;
  const int chunk = 8192;
  MatX xs(chunk, 6);
  MatX labels(chunk, n_m);
  int done = 0;
  while (done < n) {
    const int b = std::min(chunk, n - done);
    for (int i = 0; i < b; ++i) {
      Vec6 a;
      for (int k = 0; k < 6; ++k) a[k] = rng.uniform(-1.0, 1.0);
      xs.row(i) = a.transpose();
      const Vec6 w = command_to_wrench(box, a);
      VecX u = mode == AllocMode::unconstrained ? VecX(pinv * w) : solve_one(ctx, w).u;
      labels.row(i) = ((u.array() - config.u_min) / range).transpose();
    }
    const MatX pred = nn::forward(model, xs.topRows(b), nullptr);
    const MatX diff = (pred - labels.topRows(b)).cwiseAbs();
    err.max_abs = std::max(err.max_abs, diff.maxCoeff());
    acc += diff.sum();
    done += b;
  }
  err.mean_abs = acc / (static_cast<double>(n) * n_m);
  return err;
}

std::string error_report_json(std::uint64_t config_hash, AllocMode mode, int n,
                              const AllocError& err, std::uint64_t seed) {
  nlohmann::json j;
  j["config_hash"] = io::hex_u64(config_hash);
  j["mode"] = mode_name(mode);
  j["n"] = n;
  j["max_abs"] = err.max_abs;
  j["mean_abs"] = err.mean_abs;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

}  // namespace wrenchlab::alloc
