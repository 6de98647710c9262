#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "wrenchlab/linalg.hpp"
#include "wrenchlab/rng.hpp"

namespace wrenchlab::nn {

enum class Activation : std::uint8_t { linear = 0, tanh = 1, leaky_relu = 2 };
enum class Squash : std::uint8_t { none = 0, tanh = 1 };

inline constexpr double kLeakySlope = 0.01;

// dense feed-forward net, double precision; weights stored out x in
struct MlpModel {
  struct Layer {
    MatX w;  // out x in
    VecX b;  // out
    Activation act = Activation::linear;
  };
  std::vector<Layer> layers;
  Squash squash = Squash::none;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }
  std::size_t param_count() const;
};

// hidden layers get hidden_act, output layer is linear (+ optional squash);
// weights U(+-sqrt(1/fan_in)), biases zero, draw order fixed by storage order
MlpModel make_mlp(int input, const std::vector<int>& hidden, int output,
                  Activation hidden_act, Squash squash, Rng& rng);

// batches are row-major: one sample per row
struct ForwardCache {
  MatX input;
  std::vector<MatX> pre;   // pre-activation per layer
  std::vector<MatX> post;  // post-activation per layer
  MatX presquash;          // output before squash (equals post.back())
};

// row-wise evaluation so results are identical for any batch composition
MatX forward(const MlpModel& model, const MatX& x, ForwardCache* cache = nullptr);

// gemm-based variant for training loops; deterministic for a fixed batch,
// but not guaranteed bit-identical across different batch compositions
MatX forward_fast(const MlpModel& model, const MatX& x, ForwardCache* cache = nullptr);

struct MlpGrad {
  std::vector<MatX> dw;
  std::vector<VecX> db;
};

MlpGrad zero_grad(const MlpModel& model);
void accumulate(MlpGrad& into, const MlpGrad& g, double scale = 1.0);

// reverse mode for the loss whose output gradient is dL_dout (n x out);
// if grad_input != nullptr it receives dL/dx
MlpGrad backward(const MlpModel& model, const ForwardCache& cache, const MatX& dL_dout,
                 MatX* grad_input = nullptr);

// same, but the gradient is taken w.r.t. the pre-squash output
MlpGrad backward_presquash(const MlpModel& model, const ForwardCache& cache,
                           const MatX& dL_dpre, MatX* grad_input = nullptr);

// flat views: layer order, each w in column-major storage order, then b
VecX pack(const MlpModel& model);
void unpack(MlpModel& model, const VecX& flat);
VecX pack_grad(const MlpModel& model, const MlpGrad& grad);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  VecX m;
  VecX v;
};

AdamState make_adam(std::size_t n_params, double lr);

// standard bias-corrected update, in place
void adam_step(VecX& params, AdamState& state, const VecX& grad);
void adam_step(MlpModel& model, AdamState& state, const MlpGrad& grad);

// binary format: magic, version, layer table, raw f64 params, optional Adam block
std::vector<std::uint8_t> serialize(const MlpModel& model, const AdamState* opt = nullptr);
MlpModel deserialize(const std::vector<std::uint8_t>& bytes, AdamState* opt_out = nullptr);
void save_model(const std::filesystem::path& path, const MlpModel& model,
                const AdamState* opt = nullptr);
MlpModel load_model(const std::filesystem::path& path, AdamState* opt_out = nullptr);

}  // namespace wrenchlab::nn
