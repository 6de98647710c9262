#include "wrenchlab/neural.hpp"

#include <cmath>
#include <cstring>

#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"

namespace wrenchlab::nn {

namespace {

double activate(double z, Activation act) {
  switch (act) {
    case Activation::linear: return z;
    case Activation::tanh: return std::tanh(z);
    case Activation::leaky_relu: return z > 0.0 ? z : kLeakySlope * z;
  }
  return z;
}

// derivative in terms of pre-activation z and post-activation y
double activate_grad(double z, double y, Activation act) {
  switch (act) {
    case Activation::linear: return 1.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::leaky_relu: return z > 0.0 ? 1.0 : kLeakySlope;
  }
  (void)z;
  return 1.0;
}

}  // namespace

std::size_t MlpModel::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

MlpModel make_mlp(int input, const std::vector<int>& hidden, int output,
                  Activation hidden_act, Squash squash, Rng& rng) {
  if (input < 1 || output < 1) throw ValidationError("mlp needs positive input/output widths");
  MlpModel model;
  model.squash = squash;
  int in = input;
  std::vector<int> widths = hidden;
  widths.push_back(output);
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const int out = widths[k];
    if (out < 1) throw ValidationError("mlp layer width must be positive");
    MlpModel::Layer layer;
    layer.w.resize(out, in);
    const double bound = std::sqrt(1.0 / in);
    for (Eigen::Index i = 0; i < layer.w.size(); ++i)
      layer.w.data()[i] = rng.uniform(-bound, bound);
    layer.b = VecX::Zero(out);
    layer.act = k + 1 == widths.size() ? Activation::linear : hidden_act;
    model.layers.push_back(std::move(layer));
    in = out;
  }
  return model;
}

MatX forward(const MlpModel& model, const MatX& x, ForwardCache* cache) {
  if (model.layers.empty()) throw ShapeMismatch("empty model");
  if (x.cols() != model.input_dim())
    throw ShapeMismatch("forward input width " + std::to_string(x.cols()) + " != " +
                        std::to_string(model.input_dim()));
  const Eigen::Index n = x.rows();
  const std::size_t nl = model.layers.size();
  if (cache) {
    cache->input = x;
    cache->pre.assign(nl, MatX());
    cache->post.assign(nl, MatX());
  }
  MatX a = x;
  for (std::size_t l = 0; l < nl; ++l) {
    const MlpModel::Layer& layer = model.layers[l];
    const Eigen::Index out = layer.w.rows();
    MatX z(n, out);
    // one gemv per sample keeps results independent of batch composition
    VecX xi(a.cols()), zi(out);
    for (Eigen::Index i = 0; i < n; ++i) {
      xi = a.row(i);
      zi = layer.b;
      zi.noalias() += layer.w * xi;
      z.row(i) = zi;
    }
    MatX y(n, out);
    for (Eigen::Index i = 0; i < z.size(); ++i)
      y.data()[i] = activate(z.data()[i], layer.act);
    if (cache) {
      cache->pre[l] = z;
      cache->post[l] = y;
    }
    a = std::move(y);
  }
  if (cache) cache->presquash = a;
  if (model.squash == Squash::tanh)
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = std::tanh(a.data()[i]);
  return a;
}

MatX forward_fast(const MlpModel& model, const MatX& x, ForwardCache* cache) {
  if (model.layers.empty()) throw ShapeMismatch("empty model");
  if (x.cols() != model.input_dim())
    throw ShapeMismatch("forward input width " + std::to_string(x.cols()) + " != " +
                        std::to_string(model.input_dim()));
  const std::size_t nl = model.layers.size();
  if (cache) {
    cache->input = x;
    cache->pre.assign(nl, MatX());
    cache->post.assign(nl, MatX());
  }
  MatX a = x;
  for (std::size_t l = 0; l < nl; ++l) {
    const MlpModel::Layer& layer = model.layers[l];
    MatX z;
    z.noalias() = a * layer.w.transpose();
    z.rowwise() += layer.b.transpose();
    MatX y(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      y.data()[i] = activate(z.data()[i], layer.act);
    if (cache) {
      cache->pre[l] = z;
      cache->post[l] = y;
    }
    a = std::move(y);
  }
  if (cache) cache->presquash = a;
  if (model.squash == Squash::tanh)
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = std::tanh(a.data()[i]);
  return a;
}

MlpGrad zero_grad(const MlpModel& model) {
  MlpGrad g;
  for (const MlpModel::Layer& l : model.layers) {
    g.dw.push_back(MatX::Zero(l.w.rows(), l.w.cols()));
    g.db.push_back(VecX::Zero(l.b.size()));
  }
  return g;
}

void accumulate(MlpGrad& into, const MlpGrad& g, double scale) {
  for (std::size_t l = 0; l < into.dw.size(); ++l) {
    into.dw[l] += scale * g.dw[l];
    into.db[l] += scale * g.db[l];
  }
}

namespace {

MlpGrad backward_impl(const MlpModel& model, const ForwardCache& cache, const MatX& dL_dout,
                      MatX* grad_input, bool through_squash) {
  const std::size_t nl = model.layers.size();
  if (cache.pre.size() != nl) throw ShapeMismatch("stale forward cache");
  if (dL_dout.rows() != cache.input.rows() || dL_dout.cols() != model.output_dim())
    throw ShapeMismatch("output gradient shape mismatch");

  MlpGrad grad = zero_grad(model);
  MatX da = dL_dout;
  if (through_squash && model.squash == Squash::tanh) {
    // d tanh(u) = (1 - tanh(u)^2) du with u = presquash output
    for (Eigen::Index i = 0; i < da.size(); ++i) {
      const double y = std::tanh(cache.presquash.data()[i]);
      da.data()[i] *= 1.0 - y * y;
    }
  }
  for (std::size_t l = nl; l-- > 0;) {
    const MlpModel::Layer& layer = model.layers[l];
    const MatX& z = cache.pre[l];
    const MatX& y = cache.post[l];
    MatX dz(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      dz.data()[i] = da.data()[i] * activate_grad(z.data()[i], y.data()[i], layer.act);
    const MatX& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    grad.dw[l].noalias() = dz.transpose() * a_prev;
    grad.db[l] = dz.colwise().sum().transpose();
    if (l > 0 || grad_input) da.noalias() = dz * layer.w;
  }
  if (grad_input) *grad_input = std::move(da);
  return grad;
}

}  // namespace

MlpGrad backward(const MlpModel& model, const ForwardCache& cache, const MatX& dL_dout,
                 MatX* grad_input) {
  return backward_impl(model, cache, dL_dout, grad_input, true);
}

MlpGrad backward_presquash(const MlpModel& model, const ForwardCache& cache,
                           const MatX& dL_dpre, MatX* grad_input) {
  return backward_impl(model, cache, dL_dpre, grad_input, false);
}

VecX pack(const MlpModel& model) {
  VecX flat(static_cast<Eigen::Index>(model.param_count()));
  Eigen::Index pos = 0;
  for (const MlpModel::Layer& l : model.layers) {
    std::memcpy(flat.data() + pos, l.w.data(), sizeof(double) * static_cast<std::size_t>(l.w.size()));
    pos += l.w.size();
    std::memcpy(flat.data() + pos, l.b.data(), sizeof(double) * static_cast<std::size_t>(l.b.size()));
    pos += l.b.size();
  }
  return flat;
}

void unpack(MlpModel& model, const VecX& flat) {
  if (flat.size() != static_cast<Eigen::Index>(model.param_count()))
    throw ShapeMismatch("flat parameter size mismatch");
  Eigen::Index pos = 0;
  for (MlpModel::Layer& l : model.layers) {
    std::memcpy(l.w.data(), flat.data() + pos, sizeof(double) * static_cast<std::size_t>(l.w.size()));
    pos += l.w.size();
    std::memcpy(l.b.data(), flat.data() + pos, sizeof(double) * static_cast<std::size_t>(l.b.size()));
    pos += l.b.size();
  }
}

VecX pack_grad(const MlpModel& model, const MlpGrad& grad) {
  VecX flat(static_cast<Eigen::Index>(model.param_count()));
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const MatX& dw = grad.dw[i];
    const VecX& db = grad.db[i];
    std::memcpy(flat.data() + pos, dw.data(), sizeof(double) * static_cast<std::size_t>(dw.size()));
    pos += dw.size();
    std::memcpy(flat.data() + pos, db.data(), sizeof(double) * static_cast<std::size_t>(db.size()));
    pos += db.size();
  }
  return flat;
}

AdamState make_adam(std::size_t n_params, double lr) {
  AdamState st;
  st.lr = lr;
  st.m = VecX::Zero(static_cast<Eigen::Index>(n_params));
  st.v = VecX::Zero(static_cast<Eigen::Index>(n_params));
  return st;
}

void adam_step(VecX& params, AdamState& state, const VecX& grad) {
  if (params.size() != state.m.size() || grad.size() != state.m.size())
    throw ShapeMismatch("adam state size mismatch");
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= state.lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + state.eps);
}

void adam_step(MlpModel& model, AdamState& state, const MlpGrad& grad) {
  VecX params = pack(model);
  VecX g = pack_grad(model, grad);
  adam_step(params, state, g);
  unpack(model, params);
}

// -- serialization -- //

namespace {
constexpr std::uint32_t kMagic = 0x4e4e4c57u;  // "WLNN"
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize(const MlpModel& model, const AdamState* opt) {
  io::ByteWriter w;
  w.u32(kMagic);
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(model.squash));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const MlpModel::Layer& l : model.layers) {
    w.u32(static_cast<std::uint32_t>(l.w.cols()));
    w.u32(static_cast<std::uint32_t>(l.w.rows()));
    w.u8(static_cast<std::uint8_t>(l.act));
  }
  const VecX flat = pack(model);
  for (Eigen::Index i = 0; i < flat.size(); ++i) w.f64(flat[i]);
  w.u8(opt ? 1 : 0);
  if (opt) {
    if (opt->m.size() != flat.size()) throw ShapeMismatch("adam state size mismatch");
    w.f64(opt->lr);
    w.f64(opt->beta1);
    w.f64(opt->beta2);
    w.f64(opt->eps);
    w.i64(opt->t);
    for (Eigen::Index i = 0; i < flat.size(); ++i) w.f64(opt->m[i]);
    for (Eigen::Index i = 0; i < flat.size(); ++i) w.f64(opt->v[i]);
  }
  return w.take();
}

MlpModel deserialize(const std::vector<std::uint8_t>& bytes, AdamState* opt_out) {
  io::ByteReader r(bytes);
  if (r.u32() != kMagic) throw CorruptPayload("bad model magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw VersionMismatch("model format version " + std::to_string(version));
  MlpModel model;
  const std::uint8_t squash = r.u8();
  if (squash > 1) throw CorruptPayload("bad squash tag");
  model.squash = static_cast<Squash>(squash);
  const std::uint32_t nl = r.u32();
  if (nl == 0 || nl > 64) throw CorruptPayload("bad layer count");
  for (std::uint32_t l = 0; l < nl; ++l) {
    MlpModel::Layer layer;
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    if (in == 0 || out == 0 || in > 1u << 20 || out > 1u << 20)
      throw CorruptPayload("bad layer shape");
    const std::uint8_t act = r.u8();
    if (act > 2) throw CorruptPayload("bad activation tag");
    layer.w.resize(out, in);
    layer.b.resize(out);
    layer.act = static_cast<Activation>(act);
    model.layers.push_back(std::move(layer));
  }
  VecX flat(static_cast<Eigen::Index>(model.param_count()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = r.f64();
  unpack(model, flat);
  const std::uint8_t has_adam = r.u8();
  if (has_adam > 1) throw CorruptPayload("bad adam tag");
  if (has_adam) {
    AdamState st;
    st.lr = r.f64();
    st.beta1 = r.f64();
    st.beta2 = r.f64();
    st.eps = r.f64();
    st.t = r.i64();
    st.m.resize(flat.size());
    st.v.resize(flat.size());
    for (Eigen::Index i = 0; i < flat.size(); ++i) st.m[i] = r.f64();
    for (Eigen::Index i = 0; i < flat.size(); ++i) st.v[i] = r.f64();
    if (opt_out) *opt_out = std::move(st);
  } else if (opt_out) {
    *opt_out = make_adam(static_cast<std::size_t>(flat.size()), opt_out->lr);
  }
  if (!r.done()) throw CorruptPayload("trailing bytes after model payload");
  return model;
}

void save_model(const std::filesystem::path& path, const MlpModel& model, const AdamState* opt) {
  io::atomic_write(path, serialize(model, opt));
}

MlpModel load_model(const std::filesystem::path& path, AdamState* opt_out) {
  return nn::deserialize(io::read_bytes(path), opt_out);
}

}  // namespace wrenchlab::nn
