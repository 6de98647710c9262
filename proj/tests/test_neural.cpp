#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"
#include "wrenchlab/neural.hpp"

using namespace wrenchlab;

namespace {

MatX random_batch(int n, int d, Rng& rng, double scale = 1.0) {
  MatX x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = scale * rng.uniform(-1.0, 1.0);
  return x;
}

// central differences on the packed parameter vector
double fd_max_rel_error(nn::MlpModel model, const MatX& x, const MatX& target) {
  const auto loss_of = [&](const VecX& flat) {
    nn::MlpModel m = model;
    nn::unpack(m, flat);
    const MatX y = nn::forward(m, x);
    return 0.5 * (y - target).squaredNorm();
  };

  nn::ForwardCache cache;
  const MatX y = nn::forward(model, x, &cache);
  const nn::MlpGrad grad = nn::backward(model, cache, y - target);
  const VecX analytic = nn::pack_grad(model, grad);

  VecX flat = nn::pack(model);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    VecX up = flat, dn = flat;
    up[k] += h;
    dn[k] -= h;
    const double numeric = (loss_of(up) - loss_of(dn)) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-4});
    worst = std::max(worst, std::abs(numeric - analytic[k]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("initialization respects fan in bounds and zero biases") {
  Rng rng(31);
  const auto model = nn::make_mlp(15, {64, 64}, 6, nn::Activation::tanh, nn::Squash::tanh, rng);
  REQUIRE(model.layers.size() == 3);
  CHECK(model.input_dim() == 15);
  CHECK(model.output_dim() == 6);
  for (const auto& layer : model.layers) {
    const double bound = std::sqrt(1.0 / static_cast<double>(layer.w.cols()));
    CHECK(layer.w.cwiseAbs().maxCoeff() <= bound);
    CHECK(layer.b.cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(model.param_count() == 15u * 64 + 64 + 64u * 64 + 64 + 64u * 6 + 6);

  Rng rng2(31);
  const auto again = nn::make_mlp(15, {64, 64}, 6, nn::Activation::tanh, nn::Squash::tanh, rng2);
  CHECK((nn::pack(again) - nn::pack(model)).norm() == 0.0);
}

TEST_CASE("row wise forward is invariant to batch composition") {
  Rng rng(32);
  const auto model =
      nn::make_mlp(10, {32, 16}, 4, nn::Activation::leaky_relu, nn::Squash::none, rng);
  const MatX big = random_batch(64, 10, rng);
  const MatX all = nn::forward(model, big);
  // one row at a time must reproduce the batch result bit for bit
  for (int i = 0; i < big.rows(); ++i) {
    const MatX one = nn::forward(model, big.row(i));
    CHECK((one.row(0) - all.row(i)).cwiseAbs().maxCoeff() == 0.0);
  }
  // the gemm path agrees to rounding error
  const MatX fast = nn::forward_fast(model, big);
  CHECK((fast - all).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hand sized net matches a manual forward pass") {
  nn::MlpModel model;
  model.layers.resize(2);
  model.layers[0].w = (MatX(2, 2) << 0.5, -0.25, 1.0, 0.75).finished();
  model.layers[0].b = (VecX(2) << 0.1, -0.2).finished();
  model.layers[0].act = nn::Activation::tanh;
  model.layers[1].w = (MatX(1, 2) << 2.0, -1.0).finished();
  model.layers[1].b = (VecX(1) << 0.05).finished();
  model.squash = nn::Squash::tanh;

  MatX x(1, 2);
  x << 0.3, -0.6;
  const double h0 = std::tanh(0.5 * 0.3 - 0.25 * -0.6 + 0.1);
  const double h1 = std::tanh(1.0 * 0.3 + 0.75 * -0.6 - 0.2);
  const double expected = std::tanh(2.0 * h0 - 1.0 * h1 + 0.05);
  CHECK(nn::forward(model, x)(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("backward gradients agree with central differences") {
  Rng rng(33);
  struct Case {
    nn::Activation act;
    nn::Squash squash;
  };
  const Case cases[] = {
      {nn::Activation::tanh, nn::Squash::none},
      {nn::Activation::tanh, nn::Squash::tanh},
      {nn::Activation::leaky_relu, nn::Squash::none},
      {nn::Activation::linear, nn::Squash::none},
  };
  for (const auto& c : cases) {
    const auto model = nn::make_mlp(5, {8, 7}, 3, c.act, c.squash, rng);
    const MatX x = random_batch(6, 5, rng);
    const MatX target = random_batch(6, 3, rng);
    CHECK(fd_max_rel_error(model, x, target) < 1e-5);
  }
}

TEST_CASE("input gradients agree with central differences") {
  Rng rng(34);
  const auto model = nn::make_mlp(4, {9}, 2, nn::Activation::tanh, nn::Squash::tanh, rng);
  const MatX x = random_batch(3, 4, rng);
  const MatX target = random_batch(3, 2, rng);

  nn::ForwardCache cache;
  const MatX y = nn::forward(model, x, &cache);
  MatX grad_x;
  nn::backward(model, cache, y - target, &grad_x);

  const double h = 1e-6;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      MatX up = x, dn = x;
      up(i, j) += h;
      dn(i, j) -= h;
      const double lu = 0.5 * (nn::forward(model, up) - target).squaredNorm();
      const double ld = 0.5 * (nn::forward(model, dn) - target).squaredNorm();
      const double numeric = (lu - ld) / (2.0 * h);
      CHECK(grad_x(i, j) == doctest::Approx(numeric).epsilon(1e-5));
    }
  }
}

TEST_CASE("presquash backward differentiates the raw output") {
  Rng rng(35);
  const auto model = nn::make_mlp(4, {6}, 2, nn::Activation::tanh, nn::Squash::tanh, rng);
  const MatX x = random_batch(5, 4, rng);

  // loss = sum of presquash outputs; gradient via the presquash hook
  nn::ForwardCache cache;
  nn::forward(model, x, &cache);
  const nn::MlpGrad grad = nn::backward_presquash(model, cache, MatX::Ones(5, 2));
  const VecX analytic = nn::pack_grad(model, grad);

  VecX flat = nn::pack(model);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < flat.size(); k += 7) {
    VecX up = flat, dn = flat;
    up[k] += h;
    dn[k] -= h;
    nn::MlpModel mu = model, md = model;
    nn::unpack(mu, up);
    nn::unpack(md, dn);
    nn::ForwardCache cu, cd;
    nn::forward(mu, x, &cu);
    nn::forward(md, x, &cd);
    const double numeric = (cu.presquash.sum() - cd.presquash.sum()) / (2.0 * h);
    CHECK(analytic[k] == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("pack and unpack round trip the parameter vector") {
  Rng rng(36);
  auto model = nn::make_mlp(7, {5, 4}, 3, nn::Activation::tanh, nn::Squash::none, rng);
  const VecX flat = nn::pack(model);
  VecX shifted = flat;
  for (Eigen::Index k = 0; k < shifted.size(); ++k) shifted[k] += 0.001 * k;
  nn::unpack(model, shifted);
  CHECK((nn::pack(model) - shifted).norm() == 0.0);
  CHECK_THROWS_AS(nn::unpack(model, VecX::Zero(flat.size() - 1)), ShapeMismatch);
}

TEST_CASE("adam matches a scalar reference implementation") {
  VecX p = (VecX(2) << 1.0, -2.0).finished();
  nn::AdamState st = nn::make_adam(2, 0.01);
  const VecX g = (VecX(2) << 0.3, -0.1).finished();

  double m0 = 0.0, v0 = 0.0, x0 = 1.0;
  for (int t = 1; t <= 5; ++t) {
    nn::adam_step(p, st, g);
    m0 = 0.9 * m0 + 0.1 * 0.3;
    v0 = 0.999 * v0 + 0.001 * 0.3 * 0.3;
    const double mhat = m0 / (1.0 - std::pow(0.9, t));
    const double vhat = v0 / (1.0 - std::pow(0.999, t));
    x0 -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p[0] == doctest::Approx(x0).epsilon(1e-14));
  }
  CHECK(st.t == 5);
}

TEST_CASE("serialization round trips bit exactly with and without adam") {
  Rng rng(37);
  const auto model = nn::make_mlp(15, {64, 64}, 6, nn::Activation::tanh, nn::Squash::tanh, rng);

  SUBCASE("plain model") {
    const auto bytes = nn::serialize(model);
    const auto back = nn::deserialize(bytes);
    CHECK((nn::pack(back) - nn::pack(model)).norm() == 0.0);
    CHECK(back.squash == model.squash);
    CHECK(back.layers[0].act == model.layers[0].act);
    CHECK(nn::serialize(back) == bytes);
  }

  SUBCASE("with optimizer state") {
    nn::AdamState st = nn::make_adam(model.param_count(), 3e-4);
    VecX p = nn::pack(model);
    VecX g = VecX::LinSpaced(p.size(), -0.5, 0.5);
    nn::adam_step(p, st, g);
    nn::adam_step(p, st, g);
    nn::MlpModel stepped = model;
    nn::unpack(stepped, p);

    const auto path = std::filesystem::temp_directory_path() / "wl_test_adam.bin";
    nn::save_model(path, stepped, &st);
    nn::AdamState st_back;
    const auto back = nn::load_model(path, &st_back);
    CHECK((nn::pack(back) - p).norm() == 0.0);
    CHECK(st_back.t == 2);
    CHECK(st_back.lr == st.lr);
    CHECK((st_back.m - st.m).norm() == 0.0);
    CHECK((st_back.v - st.v).norm() == 0.0);
    std::filesystem::remove(path);
  }

  SUBCASE("corrupt payloads are rejected") {
    auto bytes = nn::serialize(model);
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(nn::deserialize(bytes), CorruptPayload);
    auto magic = nn::serialize(model);
    magic[0] ^= 0xff;
    CHECK_THROWS_AS(nn::deserialize(magic), CorruptPayload);
  }
}
