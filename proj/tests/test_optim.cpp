#include <gtest/gtest.h>

#include <cmath>

#include "hfta/errors.h"
#include "hfta/fused_parameter.h"
#include "hfta/optim.h"
#include "hfta/rng.h"

using namespace hfta;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (double& v : data) v = rng.uniform(-1.0, 1.0);
  return Tensor(shape, std::move(data), true);
}

// Textbook Adam on a flat vector.
struct ScalarAdam {
  double lr, b1, b2, wd, eps = 1e-8;
  std::vector<double> m{}, v{};
  int t = 0;
  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    if (m.empty()) m.assign(theta.size(), 0.0), v.assign(theta.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + wd * theta[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

struct ScalarAdadelta {
  double lr, rho, wd, eps = 1e-6;
  std::vector<double> sq{}, acc{};
  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    if (sq.empty()) sq.assign(theta.size(), 0.0), acc.assign(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + wd * theta[i];
      sq[i] = rho * sq[i] + (1 - rho) * g * g;
      const double d = std::sqrt(acc[i] + eps) / std::sqrt(sq[i] + eps) * g;
      acc[i] = rho * acc[i] + (1 - rho) * d * d;
      theta[i] -= lr * d;
    }
  }
};

// Gradient of 0.5 * sum(a * (theta - c)^2).
std::vector<double> quad_grad(std::span<const double> theta, std::span<const double> a, std::span<const double> c) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = a[i] * (theta[i] - c[i]);
  return g;
}

std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

AdamHyper adam(std::vector<double> lr, std::vector<double> b1, std::vector<double> b2, std::vector<double> wd) {
  return {{"lr", lr}, {"beta1", b1}, {"beta2", b2}, {"weight_decay", wd}};
}

}  // namespace

TEST(BroadcastHyper, EqualEntriesGiveConstantTensor) {
  Rng rng(1);
  const std::vector<Tensor> parts{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
  const FusedParameter p = FusedParameter::concat(parts, 0);
  const Tensor t = broadcast_hyper(HyperVector::constant("lr", 0.25, 2), p);
  EXPECT_EQ(t.shape(), p.value.shape());
  for (double v : t.data()) EXPECT_EQ(v, 0.25);
}

TEST(BroadcastHyper, ConvWeightBlocksFollowModels) {
  Rng rng(2);
  const std::vector<Tensor> parts{random_tensor({4, 2, 3, 3}, rng), random_tensor({4, 2, 3, 3}, rng)};
  const FusedParameter p = FusedParameter::concat(parts, 0);
  ASSERT_EQ(p.per_model_extent, 4);
  const Tensor t = broadcast_hyper(HyperVector{"lr", {0.1, 0.2}}, p);
  const std::int64_t per_channel = 2 * 3 * 3;
  for (std::int64_t oc = 0; oc < 8; ++oc)
    for (std::int64_t i = 0; i < per_channel; ++i) EXPECT_EQ(t[oc * per_channel + i], oc < 4 ? 0.1 : 0.2);
}

TEST(BroadcastHyper, SingleModelIsScalarBroadcast) {
  Rng rng(3);
  const FusedParameter p = FusedParameter::serial(random_tensor({5}, rng));
  const Tensor t = broadcast_hyper(HyperVector{"lr", {0.3}}, p);
  for (double v : t.data()) EXPECT_EQ(v, 0.3);
}

TEST(BroadcastHyper, LengthMismatchThrows) {
  Rng rng(4);
  const FusedParameter p = FusedParameter::serial(random_tensor({5}, rng));
  EXPECT_THROW(broadcast_hyper(HyperVector{"lr", {0.3, 0.4}}, p), FusionError);
}

TEST(FusedAdam, SingleModelEqualsScalarAdam) {
  Rng rng(5);
  std::vector<FusedParameter> params{FusedParameter::serial(random_tensor({6}, rng))};
  const Tensor a = random_tensor({6}, rng), c = random_tensor({6}, rng);
  std::vector<double> theta = to_vec(params[0].value);
  ScalarAdam ref{0.01, 0.9, 0.999, 0.0};
  OptState state;
  for (int t = 0; t < 10; ++t) {
    const std::vector<Tensor> grads{Tensor({6}, quad_grad(params[0].value.data(), a.data(), c.data()))};
    ref.step(theta, quad_grad(theta, a.data(), c.data()));
    fused_adam_step(params, grads, state, adam({0.01}, {0.9}, {0.999}, {0.0}));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(params[0].value[i], theta[i], 1e-15);
  }
  EXPECT_EQ(state.step, 10);
}

TEST(FusedAdam, ThreeLearningRatesFiftyStepsMatchSerial) {
  Rng rng(6);
  const std::int64_t B = 3;
  std::vector<Tensor> parts;
  for (std::int64_t b = 0; b < B; ++b) parts.push_back(random_tensor({2, 4}, rng));
  std::vector<FusedParameter> params{FusedParameter::stack(parts)};
  const Tensor a = random_tensor({B, 2, 4}, rng), c = random_tensor({B, 2, 4}, rng);
  const std::vector<double> lrs{1e-3, 5e-3, 2e-2};
  std::vector<ScalarAdam> refs;
  std::vector<std::vector<double>> thetas;
  for (std::int64_t b = 0; b < B; ++b) {
    refs.push_back({lrs[b], 0.9, 0.999, 0.0});
    thetas.push_back(to_vec(parts[b]));
  }
  OptState state;
  for (int t = 0; t < 50; ++t) {
    const std::vector<Tensor> grads{Tensor({B, 2, 4}, quad_grad(params[0].value.data(), a.data(), c.data()))};
    fused_adam_step(params, grads, state, adam(lrs, {0.9, 0.9, 0.9}, {0.999, 0.999, 0.999}, {0, 0, 0}));
    for (std::int64_t b = 0; b < B; ++b) {
      refs[b].step(thetas[b], quad_grad(thetas[b], a.data().subspan(b * 8, 8), c.data().subspan(b * 8, 8)));
      const Tensor slice = params[0].model_slice(b);
      for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(slice[i], thetas[b][i], 1e-10);
    }
  }
}

TEST(FusedAdam, ZeroGradientMovesOnlyThroughWeightDecay) {
  Rng rng(7);
  const std::vector<Tensor> parts{random_tensor({3}, rng), random_tensor({3}, rng)};
  std::vector<FusedParameter> params{FusedParameter::concat(parts, 0)};
  const Tensor before = params[0].value.clone();
  OptState state;
  const std::vector<Tensor> grads{Tensor::zeros({6})};
  fused_adam_step(params, grads, state, adam({0.1, 0.1}, {0.9, 0.9}, {0.999, 0.999}, {0.0, 0.5}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(params[0].value[i], before[i]);
  std::vector<double> theta(before.data().begin() + 3, before.data().end());
  ScalarAdam ref{0.1, 0.9, 0.999, 0.5};
  ref.step(theta, {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(params[0].value[3 + i], theta[i], 1e-15);
    EXPECT_NE(params[0].value[3 + i], before[3 + i]);
  }
}

TEST(FusedAdam, EqualHyperVectorMatchesSharedScalar) {
  Rng rng(8);
  const std::vector<Tensor> parts{random_tensor({4}, rng), random_tensor({4}, rng)};
  std::vector<FusedParameter> fused{FusedParameter::concat(parts, 0)};
  std::vector<FusedParameter> s0{FusedParameter::serial(parts[0].clone())}, s1{FusedParameter::serial(parts[1].clone())};
  OptState fs, st0, st1;
  const Tensor g = random_tensor({8}, rng);
  const std::vector<Tensor> fg{g};
  const std::vector<Tensor> g0{Tensor({4}, {g[0], g[1], g[2], g[3]})}, g1{Tensor({4}, {g[4], g[5], g[6], g[7]})};
  for (int t = 0; t < 5; ++t) {
    fused_adam_step(fused, fg, fs, adam({0.01, 0.01}, {0.8, 0.8}, {0.99, 0.99}, {0.1, 0.1}));
    fused_adam_step(s0, g0, st0, adam({0.01}, {0.8}, {0.99}, {0.1}));
    fused_adam_step(s1, g1, st1, adam({0.01}, {0.8}, {0.99}, {0.1}));
  }
  EXPECT_EQ(max_abs_diff(fused[0].model_slice(0), s0[0].value), 0.0);
  EXPECT_EQ(max_abs_diff(fused[0].model_slice(1), s1[0].value), 0.0);
}

TEST(FusedAdam, InvalidHyperparametersThrow) {
  Rng rng(9);
  std::vector<FusedParameter> params{FusedParameter::serial(random_tensor({2}, rng))};
  const std::vector<Tensor> grads{Tensor::zeros({2})};
  OptState s;
  EXPECT_THROW(fused_adam_step(params, grads, s, adam({0.0}, {0.9}, {0.999}, {0})), ConfigError);
  EXPECT_THROW(fused_adam_step(params, grads, s, adam({0.1}, {1.0}, {0.999}, {0})), ConfigError);
  EXPECT_THROW(fused_adam_step(params, grads, s, adam({0.1}, {0.9}, {0.0}, {0})), ConfigError);
  EXPECT_THROW(fused_adam_step(params, grads, s, adam({0.1, 0.2}, {0.9}, {0.999}, {0})), FusionError);
}

TEST(FusedAdam, StateShapeDriftThrows) {
  Rng rng(10);
  std::vector<FusedParameter> params{FusedParameter::serial(random_tensor({2}, rng))};
  OptState s;
  const std::vector<Tensor> grads{Tensor::zeros({2})};
  fused_adam_step(params, grads, s, adam({0.1}, {0.9}, {0.999}, {0}));
  std::vector<FusedParameter> other{FusedParameter::serial(random_tensor({3}, rng))};
  const std::vector<Tensor> g3{Tensor::zeros({3})};
  EXPECT_THROW(fused_adam_step(other, g3, s, adam({0.1}, {0.9}, {0.999}, {0})), StateError);
}

TEST(FusedAdadelta, SingleModelEqualsScalarAdadelta) {
  Rng rng(11);
  std::vector<FusedParameter> params{FusedParameter::serial(random_tensor({5}, rng))};
  const Tensor a = random_tensor({5}, rng), c = random_tensor({5}, rng);
  std::vector<double> theta = to_vec(params[0].value);
  ScalarAdadelta ref{1.0, 0.9, 0.01};
  OptState state;
  for (int t = 0; t < 10; ++t) {
    const std::vector<Tensor> grads{Tensor({5}, quad_grad(params[0].value.data(), a.data(), c.data()))};
    ref.step(theta, quad_grad(theta, a.data(), c.data()));
    fused_adadelta_step(params, grads, state, AdadeltaHyper{{"lr", {1.0}}, {"rho", {0.9}}, {"weight_decay", {0.01}}});
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(params[0].value[i], theta[i], 1e-15);
  }
}

TEST(FusedAdadelta, TwoRhosTwentyStepsMatchSerial) {
  Rng rng(12);
  const std::vector<Tensor> parts{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)};
  std::vector<FusedParameter> params{FusedParameter::concat(parts, 0)};
  const Tensor a = random_tensor({6, 2}, rng), c = random_tensor({6, 2}, rng);
  const std::vector<double> rhos{0.9, 0.95};
  std::vector<ScalarAdadelta> refs{{1.0, rhos[0], 0.0}, {1.0, rhos[1], 0.0}};
  std::vector<std::vector<double>> thetas{to_vec(parts[0]), to_vec(parts[1])};
  OptState state;
  for (int t = 0; t < 20; ++t) {
    const std::vector<Tensor> grads{Tensor({6, 2}, quad_grad(params[0].value.data(), a.data(), c.data()))};
    fused_adadelta_step(params, grads, state, AdadeltaHyper{{"lr", {1.0, 1.0}}, {"rho", rhos}, {"weight_decay", {0, 0}}});
    for (int b = 0; b < 2; ++b) {
      refs[b].step(thetas[b], quad_grad(thetas[b], a.data().subspan(b * 6, 6), c.data().subspan(b * 6, 6)));
      const Tensor slice = params[0].model_slice(b);
      for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(slice[i], thetas[b][i], 1e-10);
    }
  }
}

TEST(FusedAdadelta, FirstStepClosedForm) {
  const double lr = 0.5, rho = 0.9, eps = 1e-6;
  const std::vector<double> g{0.3, -2.0, 1e-4};
  std::vector<FusedParameter> params{FusedParameter::serial(Tensor::zeros({3}).set_requires_grad(true))};
  const std::vector<Tensor> grads{Tensor({3}, g)};
  OptState state;
  fused_adadelta_step(params, grads, state, AdadeltaHyper{{"lr", {lr}}, {"rho", {rho}}, {"weight_decay", {0.0}}, eps});
  for (std::size_t i = 0; i < 3; ++i) {
    const double magnitude = lr * std::abs(g[i]) * std::sqrt(eps) / std::sqrt(eps + (1 - rho) * g[i] * g[i]);
    EXPECT_NEAR(std::abs(params[0].value[i]), magnitude, 1e-15);
    EXPECT_LT(params[0].value[i] * g[i], 0.0);
  }
}

TEST(StepLR, UnitGammaKeepsRate) {
  const std::vector<std::int64_t> periods{3};
  for (std::int64_t e : {0, 5, 100})
    EXPECT_EQ(fused_steplr({"lr", {0.1}}, e, periods, {"gamma", {1.0}}).values[0], 0.1);
}

TEST(StepLR, ClosedFormExample) {
  const std::vector<std::int64_t> periods{10};
  EXPECT_DOUBLE_EQ(fused_steplr({"lr", {0.1}}, 25, periods, {"gamma", {0.5}}).values[0], 0.1 * 0.5 * 0.5);
  EXPECT_NEAR(fused_steplr({"lr", {0.1}}, 25, periods, {"gamma", {0.5}}).values[0], 0.025, 1e-17);
}

TEST(StepLR, PerModelPeriodsDecayIndependently) {
  const std::vector<std::int64_t> periods{5, 10};
  const HyperVector lr0{"lr", {1.0, 1.0}}, gamma{"gamma", {0.5, 0.5}};
  for (std::int64_t e = 0; e < 30; ++e) {
    const HyperVector lr = fused_steplr(lr0, e, periods, gamma);
    EXPECT_EQ(lr.values[0], std::pow(0.5, static_cast<double>(e / 5)));
    EXPECT_EQ(lr.values[1], std::pow(0.5, static_cast<double>(e / 10)));
  }
  // Pure function: re-evaluation gives the same answer.
  EXPECT_EQ(fused_steplr(lr0, 17, periods, gamma).values, fused_steplr(lr0, 17, periods, gamma).values);
}

TEST(StepLR, InvalidArgumentsThrow) {
  const std::vector<std::int64_t> zero{0}, one{1};
  EXPECT_THROW(fused_steplr({"lr", {0.1}}, 1, zero, {"gamma", {0.5}}), ConfigError);
  EXPECT_THROW(fused_steplr({"lr", {0.1}}, -1, one, {"gamma", {0.5}}), ConfigError);
  EXPECT_THROW(fused_steplr({"lr", {0.1}}, 1, one, {"gamma", {1.5}}), ConfigError);
  EXPECT_THROW(fused_steplr({"lr", {0.1, 0.2}}, 1, one, {"gamma", {0.5}}), FusionError);
}

TEST(FusedOptimizer, StepReadsGradientsAndZeroGradClears) {
  Rng rng(13);
  const Tensor w = random_tensor({3}, rng);
  FusedOptimizer opt({FusedParameter::serial(w)}, adam({0.1}, {0.9}, {0.999}, {0.0}));
  w.impl()->grad.assign(3, 1.0);
  const Tensor before = w.clone();
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], before[i] - 0.1, 1e-7);
  opt.zero_grad();
  EXPECT_FALSE(w.has_grad() && w.grad()[0] != 0.0);
  opt.set_lr({"lr", {0.5}});
  EXPECT_EQ(opt.lr().values[0], 0.5);
}
