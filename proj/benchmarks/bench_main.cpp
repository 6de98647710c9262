// microbenchmarks for the hot paths: QP labeling, network passes, sim stepping,
// and the assignment solve inside the wasserstein measure
#include <benchmark/benchmark.h>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/alloc.hpp"
#include "wrenchlab/assignment.hpp"
#include "wrenchlab/neural.hpp"
#include "wrenchlab/rng.hpp"
#include "wrenchlab/sim.hpp"

using namespace wrenchlab;

namespace {

std::vector<Vec6> random_wrenches(const AirframeConfig& config, int n, std::uint64_t seed) {
  const WrenchBox box = compute_wrench_box(config);
  Rng rng(seed);
  std::vector<Vec6> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Vec6 a;
    for (int k = 0; k < 6; ++k) a[k] = rng.uniform(-1.0, 1.0);
    out.push_back(command_to_wrench(box, a));
  }
  return out;
}

void bm_qp_batch(benchmark::State& state) {
  const AirframeConfig config = standard_airframe(4);
  const AllocationMatrix f = build_allocation_matrix(config);
  const auto targets = random_wrenches(config, static_cast<int>(state.range(0)), 5);
  for (auto _ : state) {
    auto sols = alloc::solve_allocation_qp_batch(f, targets, config.u_min, config.u_max, 1.0);
    benchmark::DoNotOptimize(sols);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_mlp_forward(benchmark::State& state) {
  Rng rng(3);
  const nn::MlpModel model =
      nn::make_mlp(15, {64, 64}, 6, nn::Activation::tanh, nn::Squash::tanh, rng);
  MatX x(state.range(0), 15);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < 15; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
  for (auto _ : state) {
    MatX y = nn::forward_fast(model, x, nullptr);
    benchmark::DoNotOptimize(y);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_mlp_backward(benchmark::State& state) {
  Rng rng(4);
  const nn::MlpModel model =
      nn::make_mlp(15, {64, 64}, 6, nn::Activation::tanh, nn::Squash::tanh, rng);
  MatX x(state.range(0), 15);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < 15; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
  for (auto _ : state) {
    nn::ForwardCache cache;
    MatX y = nn::forward_fast(model, x, &cache);
    nn::MlpGrad g = nn::backward(model, cache, y);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_sim_step(benchmark::State& state) {
  const AirframeConfig config = standard_airframe(4);
  const sim::SimModel model = make_sim_model(config, {});
  Rng rng(6);
  sim::RigidBodyState s{};
  s.p = Vec3(0.1, -0.2, 0.3);
  s.v = Vec3(0.05, 0.0, -0.05);
  s.q = Eigen::Quaterniond::Identity();
  s.omega = Vec3(0.1, -0.1, 0.0);
  VecX u = VecX::Constant(4, config.mass * 9.81 / 4.0);
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) {
    sim::RigidBodyState cur = s;
    for (int i = 0; i < n; ++i) {
      auto r = sim::step(model, cur, u);
      cur = r.next;
    }
    benchmark::DoNotOptimize(cur);
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void bm_assignment(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(8);
  MatX cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = rng.uniform(0.0, 1.0);
  for (auto _ : state) {
    auto match = assign::solve_assignment(cost);
    benchmark::DoNotOptimize(match);
  }
}

}  // namespace

BENCHMARK(bm_qp_batch)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_mlp_forward)->Arg(64)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_mlp_backward)->Arg(64)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_sim_step)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_assignment)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
