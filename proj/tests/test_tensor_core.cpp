#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "hfta/autograd.h"
#include "hfta/conv.h"
#include "hfta/errors.h"
#include "hfta/gradcheck.h"
#include "hfta/kernel_counter.h"
#include "hfta/rng.h"
#include "hfta/tensor.h"
#include "hfta/tensor_ops.h"

using namespace hfta;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = false) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (double& v : data) v = rng.uniform(-1.0, 1.0);
  return Tensor(shape, std::move(data), grad);
}

// Triple loop.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t p = 0; p < k; ++p) out[i * n + j] += a[i * k + p] * b[p * n + j];
  return out;
}

}  // namespace

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(static_cast<std::int64_t>(t.data().size()), numel(t.shape()));
}

TEST(Tensor, CopiesShareStorageAndCloneDoesNot) {
  Tensor a = Tensor::zeros({3});
  Tensor b = a;
  Tensor c = a.clone();
  a.mutable_data()[1] = 5.0;
  EXPECT_EQ(b[1], 5.0);
  EXPECT_EQ(c[1], 0.0);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  Rng rng(1);
  const Tensor a = random_tensor({2, 2}, rng);
  EXPECT_EQ(max_abs_diff(matmul(eye, a), a), 0.0);
}

TEST(Matmul, SmallExample) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {5, 6});
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  const std::vector<double> expect = naive_matmul(a, b);
  EXPECT_EQ(c[0], expect[0]);
  EXPECT_EQ(c[1], expect[1]);
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
}

TEST(Matmul, RandomMatchesTripleLoop) {
  Rng rng(2);
  const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  const Tensor c = matmul(a, b);
  const std::vector<double> expect = naive_matmul(a, b);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-12);
}

TEST(Matmul, InnerExtentMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradientOfSumIsRowSumsOfRightOperand) {
  Rng rng(3);
  const Tensor a = random_tensor({3, 4}, rng, true);
  const Tensor b = random_tensor({4, 2}, rng);
  {
    GradTape tape;
    tape.backward(sum(matmul(a, b)));
  }
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t k = 0; k < 4; ++k) {
      const double expect = b[k * 2] + b[k * 2 + 1];
      EXPECT_NEAR(a.grad()[i * 4 + k], expect, 1e-12);
    }
  const GradCheckResult r = gradient_check(
      [&](const std::vector<Tensor>& in) { return sum(matmul(in[0], b)); }, {a.detach().set_requires_grad(true)});
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(Baddbmm, SingleModelIsMatmulPlusBias) {
  Rng rng(4);
  const Tensor x = random_tensor({3, 4}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
  const Tensor fused = baddbmm(reshape(b, {1, 1, 5}), reshape(x, {1, 3, 4}), reshape(w, {1, 4, 5}));
  const Tensor serial = addmm(b, x, w);
  EXPECT_EQ(max_abs_diff(reshape(fused, {3, 5}), serial), 0.0);
}

TEST(Baddbmm, TwoModelsEqualIndependentMatmuls) {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4}, rng), w = random_tensor({2, 4, 5}, rng),
               bias = random_tensor({2, 1, 5}, rng);
  const Tensor out = baddbmm(bias, x, w);
  for (std::int64_t m = 0; m < 2; ++m) {
    const Tensor xm({3, 4}, {x.data().begin() + m * 12, x.data().begin() + (m + 1) * 12});
    const Tensor wm({4, 5}, {w.data().begin() + m * 20, w.data().begin() + (m + 1) * 20});
    const std::vector<double> prod = naive_matmul(xm, wm);
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 5; ++j)
        EXPECT_NEAR(out[m * 15 + i * 5 + j], prod[i * 5 + j] + bias[m * 5 + j], 1e-12);
  }
}

TEST(Baddbmm, IdentityWeightsAndZeroBiasReturnInput) {
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, 3}, rng);
  std::vector<double> eye(18, 0.0);
  for (int m = 0; m < 2; ++m)
    for (int i = 0; i < 3; ++i) eye[m * 9 + i * 4] = 1.0;
  EXPECT_EQ(max_abs_diff(baddbmm(Tensor::zeros({2, 1, 3}), x, Tensor({2, 3, 3}, eye)), x), 0.0);
}

TEST(Concat, SingleTensorIsUnchanged) {
  Rng rng(7);
  const Tensor a = random_tensor({2, 3}, rng);
  const std::vector<Tensor> one{a};
  EXPECT_EQ(max_abs_diff(concat(one, 1), a), 0.0);
}

TEST(Concat, AlongAxisOneInterleavesRowBlocks) {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({2, 3}, {7, 8, 9, 10, 11, 12});
  const std::vector<Tensor> parts{a, b};
  const Tensor c = concat(parts, 1);
  ASSERT_EQ(c.shape(), (Shape{2, 6}));
  // Row r is a's row r followed by b's row r.
  for (std::int64_t r = 0; r < 2; ++r)
    for (std::int64_t j = 0; j < 6; ++j) {
      const double expect = j < 3 ? a[r * 3 + j] : b[r * 3 + (j - 3)];
      EXPECT_EQ(c[r * 6 + j], expect);
    }
}

TEST(Concat, SplitRoundTripIsBitIdentical) {
  Rng rng(8);
  for (std::int64_t axis = 0; axis < 3; ++axis) {
    std::vector<Tensor> parts;
    std::vector<std::int64_t> extents;
    for (int i = 0; i < 5; ++i) {
      Shape s{2, 3, 4};
      s[axis] = 1 + static_cast<std::int64_t>(rng.below(3));
      extents.push_back(s[axis]);
      parts.push_back(random_tensor(s, rng));
    }
    const std::vector<Tensor> back = split(concat(parts, axis), axis, extents);
    ASSERT_EQ(back.size(), parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) EXPECT_EQ(max_abs_diff(back[i], parts[i]), 0.0);
  }
}

TEST(Concat, RaggedInputsThrow) {
  const std::vector<Tensor> parts{Tensor::zeros({2, 3}), Tensor::zeros({3, 3})};
  EXPECT_THROW(concat(parts, 1), DimensionError);
}

TEST(Elementwise, ReluClampsNegatives) {
  const Tensor y = relu(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Elementwise, Relu6ClampsAtSix) {
  const double x = 7.5;
  EXPECT_EQ(relu6(Tensor({1}, {x}))[0], std::min(std::max(x, 0.0), 6.0));
  EXPECT_EQ(relu6(Tensor({1}, {-2.0}))[0], 0.0);
}

TEST(Elementwise, LeakyReluUsesSlope) {
  const Tensor y = leaky_relu(Tensor({2}, {-2.0, 3.0}), 0.1);
  EXPECT_DOUBLE_EQ(y[0], -0.2);
  EXPECT_EQ(y[1], 3.0);
}

TEST(Elementwise, TanhGradientMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor x = random_tensor({6}, rng, true);
  {
    GradTape tape;
    tape.backward(sum(hfta::tanh(x)));
  }
  const double h = 1e-6;
  for (std::size_t i = 0; i < 6; ++i) {
    const double numeric = (std::tanh(x[i] + h) - std::tanh(x[i] - h)) / (2 * h);
    EXPECT_NEAR(x.grad()[i], numeric, 1e-6);
  }
}

TEST(Elementwise, MismatchedOperandsThrow) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Autograd, SumGivesOnes) {
  const Tensor x = Tensor({4}, {1, 2, 3, 4}, true);
  GradTape tape;
  const GradMap g = tape.backward(sum(x));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.at(x)[i], 1.0);
  EXPECT_EQ(x.grad().shape(), x.shape());
}

TEST(Autograd, ConvReluMeanMatchesFiniteDifferences) {
  Rng rng(10);
  const ConvConfig cfg{2, 3, {3, 3}, {1, 1}, {1, 1}, 1, false};
  const GradCheckResult r = gradient_check(
      [&](const std::vector<Tensor>& in) {
        return mean(relu(grouped_conv_forward(in[0], in[1], in[2], cfg)));
      },
      {random_tensor({2, 2, 4, 4}, rng, true), random_tensor(cfg.weight_shape(), rng, true),
       random_tensor({3}, rng, true)});
  EXPECT_GT(r.checked, 0u);
  EXPECT_LE(r.max_rel_error, 1e-5);
}

TEST(Autograd, DisjointModelsOnOneTapeDoNotMix) {
  Rng rng(11);
  const Tensor w1 = random_tensor({3, 2}, rng, true), w2 = random_tensor({3, 2}, rng, true);
  const Tensor x1 = random_tensor({4, 3}, rng), x2 = random_tensor({4, 3}, rng);
  {
    GradTape tape;
    tape.backward(add(sum(matmul(x1, w1)), sum(matmul(x2, w2))));
  }
  const Tensor g1 = w1.grad().clone();
  w1.zero_grad();
  {
    GradTape tape;
    // Model 2's data replaced entirely; model 1's gradient must not move.
    tape.backward(add(sum(matmul(x1, w1)), sum(matmul(scale(x2, 7.0), w2))));
  }
  EXPECT_EQ(max_abs_diff(w1.grad(), g1), 0.0);
}

TEST(Autograd, RequiresGradPropagates) {
  const Tensor a = Tensor({2}, {1, 2}, true);
  const Tensor b = Tensor({2}, {3, 4});
  EXPECT_TRUE(add(a, b).requires_grad());
  EXPECT_FALSE(add(b, b).requires_grad());
}

TEST(Autograd, TapeCannotBeReused) {
  const Tensor x = Tensor({2}, {1, 2}, true);
  GradTape tape;
  const Tensor loss = sum(x);
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), TapeError);
}

TEST(Autograd, NonScalarLossThrows) {
  const Tensor x = Tensor({2}, {1, 2}, true);
  GradTape tape;
  EXPECT_THROW(tape.backward(scale(x, 2.0)), Error);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  const Tensor x = Tensor({1}, {3.0}, true);
  {
    GradTape tape;
    const Tensor y = mul(x, x);
    tape.backward(sum(add(y, y)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0 * 3.0);
}

TEST(Rng, SplitStreamsAreDeterministicAndDistinct) {
  Rng a = Rng(42).split("init").split(3);
  Rng b = Rng(42).split("init").split(3);
  Rng c = Rng(42).split("init").split(4);
  const double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(KernelCounter, CountsPerThread) {
  KernelCounter::reset();
  matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
  const std::int64_t here = KernelCounter::total();
  EXPECT_GE(here, 1);
  std::int64_t there = -1;
  std::thread t([&] {
    KernelCounter::reset();
    there = KernelCounter::total();
  });
  t.join();
  EXPECT_EQ(there, 0);
  EXPECT_EQ(KernelCounter::total(), here);
}

TEST(GradCheck, EveryBasicOpPassesOnUniformInputs) {
  Rng rng(12);
  const auto check = [&](const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                         std::vector<Tensor> inputs) {
    const GradCheckResult r = gradient_check(fn, std::move(inputs), 1e-6, 1e-7);
    EXPECT_LE(r.max_rel_error, 1e-4);
  };
  const Tensor w = random_tensor({2, 3}, rng);
  const auto weighted = [w](const Tensor& y) { return sum(mul(y, w)); };
  check([&](const std::vector<Tensor>& in) { return weighted(add(in[0], in[1])); },
        {random_tensor({2, 3}, rng, true), random_tensor({2, 3}, rng, true)});
  check([&](const std::vector<Tensor>& in) { return weighted(mul(in[0], in[1])); },
        {random_tensor({2, 3}, rng, true), random_tensor({2, 3}, rng, true)});
  check([&](const std::vector<Tensor>& in) { return weighted(hfta::tanh(in[0])); },
        {random_tensor({2, 3}, rng, true)});
  check([&](const std::vector<Tensor>& in) { return weighted(scale(in[0], -1.5)); },
        {random_tensor({2, 3}, rng, true)});
  check([&](const std::vector<Tensor>& in) { return mean(in[0]); }, {random_tensor({2, 3}, rng, true)});
  check([&](const std::vector<Tensor>& in) { return weighted(reshape(in[0], {2, 3})); },
        {random_tensor({3, 2}, rng, true)});
  check([&](const std::vector<Tensor>& in) { return weighted(gather(in[0], {2, 3}, {5, 4, 3, 0, 0, 1})); },
        {random_tensor({6}, rng, true)});
}
