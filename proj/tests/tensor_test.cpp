#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "alnet/gradcheck.hpp"
#include "alnet/ops.hpp"
#include "test_util.hpp"

using namespace alnet;
using alnet::testing::random_tensor;

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t(Shape{2, 3, 4}, real{1.5});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), element_count(t.shape()));
  EXPECT_FALSE(t.requires_grad());
  EXPECT_FALSE(t.has_grad());
  t.set_requires_grad(true);
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.numel());
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<real>(3)), Error);
}

TEST(Tensor, CopiesAliasClonesDoNot) {
  Tensor a(Shape{2}, real{1});
  Tensor b = a;
  Tensor c = a.clone();
  b.data()[0] = 7;
  EXPECT_EQ(a.data()[0], 7);
  EXPECT_EQ(c.data()[0], 1);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  Tensor x = random_tensor({2, 5, 6}, rng);
  Tensor w(Shape{2, 2, 1, 1}, std::vector<real>{1, 0, 0, 1});
  Tensor b(Shape{2}, real{0});
  Tape tape(false);
  Tensor y = conv2d(tape, x, w, b, 1, 0);
  EXPECT_TRUE(y.bitwise_equal(x));
}

TEST(Conv2d, AllOnesSumsNeighbourhood) {
  Tensor x(Shape{1, 3, 3}, real{1});
  Tensor w(Shape{1, 1, 3, 3}, real{1});
  Tape tape(false);
  Tensor y = conv2d(tape, x, w, Tensor(), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
  EXPECT_EQ(y.data()[4], 9);
  EXPECT_EQ(y.data()[0], 4);
  EXPECT_EQ(y.data()[1], 6);
}

TEST(Conv2d, StemShapeArithmetic) {
  EXPECT_EQ(sweep_extent(224, 7, 2, 3), 112u);
  Tensor x(Shape{3, 32, 32});
  Tensor w(Shape{4, 3, 7, 7});
  Tape tape(false);
  EXPECT_EQ(conv2d(tape, x, w, Tensor(), 2, 3).shape(), (Shape{4, 16, 16}));
}

TEST(Conv2d, ChannelMismatchIsConfigError) {
  Tensor x(Shape{3, 4, 4});
  Tensor w(Shape{2, 2, 3, 3});
  Tape tape(false);
  try {
    conv2d(tape, x, w, Tensor(), 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(BatchNorm, FixedPointOnStandardizedBatch) {
  // Channel values {-1, 1} repeated have mean 0 and biased variance 1.
  Tensor x(Shape{2, 1, 1, 2}, std::vector<real>{-1, 1, 1, -1});
  Tensor gamma(Shape{1}, real{1}), beta(Shape{1}, real{0});
  auto stats = BatchNormStats::fresh(1);
  Tape tape(false);
  Tensor y = batchnorm2d(tape, x, gamma, beta, stats, BnMode::Train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(std::abs(y.data()[i] - x.data()[i]), 1e-4);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(3);
  Tensor x = random_tensor({3, 2, 4, 4}, rng);
  Tensor gamma(Shape{2}, real{0}), beta(Shape{2}, std::vector<real>{0.25f, -2.f});
  auto stats = BatchNormStats::fresh(2);
  Tape tape(false);
  Tensor y = batchnorm2d(tape, x, gamma, beta, stats, BnMode::Train);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y.data()[(n * 2 + c) * 16 + i], beta.data()[c]);
}

TEST(BatchNorm, TwoElementChannel) {
  Tensor x(Shape{1, 1, 1, 2}, std::vector<real>{1, 3});
  Tensor gamma(Shape{1}, real{1}), beta(Shape{1}, real{0});
  auto stats = BatchNormStats::fresh(1);
  Tape tape(false);
  Tensor y = batchnorm2d(tape, x, gamma, beta, stats, BnMode::Train);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-5);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-5);
  EXPECT_NEAR(stats.running_mean.data()[0], 0.2, 1e-6);       // 0.9*0 + 0.1*2
  EXPECT_NEAR(stats.running_var.data()[0], 0.9 + 0.1 * 2, 1e-6);  // unbiased var 2
}

TEST(BatchNorm, DegenerateBatchRejected) {
  Tensor x(Shape{1, 2, 1, 1});
  Tensor gamma(Shape{2}, real{1}), beta(Shape{2}, real{0});
  auto stats = BatchNormStats::fresh(2);
  Tape tape(false);
  try {
    batchnorm2d(tape, x, gamma, beta, stats, BnMode::Train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
  EXPECT_NO_THROW(batchnorm2d(tape, x, gamma, beta, stats, BnMode::Eval));
}

TEST(BatchNorm, EvalModeIsPure) {
  Rng rng(4);
  Tensor x = random_tensor({2, 3, 3, 3}, rng);
  Tensor gamma = random_tensor({3}, rng), beta = random_tensor({3}, rng);
  BatchNormStats stats{random_tensor({3}, rng), random_tensor({3}, rng, 0.5, 2.0)};
  const Tensor mean_before = stats.running_mean.clone();
  const Tensor var_before = stats.running_var.clone();
  Tape tape(false);
  Tensor a = batchnorm2d(tape, x, gamma, beta, stats, BnMode::Eval);
  Tensor b = batchnorm2d(tape, x, gamma, beta, stats, BnMode::Eval);
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_TRUE(stats.running_mean.bitwise_equal(mean_before));
  EXPECT_TRUE(stats.running_var.bitwise_equal(var_before));
}

TEST(Activation, Values) {
  Tape tape(false);
  Tensor x(Shape{2}, std::vector<real>{-1, 2});
  Tensor r = relu(tape, x);
  EXPECT_EQ(r.data()[0], 0);
  EXPECT_EQ(r.data()[1], 2);
  EXPECT_EQ(sigmoid(tape, Tensor::scalar(0)).item(), real(0.5));
  EXPECT_EQ(alnet::tanh(tape, Tensor::scalar(0)).item(), real(0));
  Rng rng(5);
  Tensor big = random_tensor({200}, rng, -30, 30);
  const Tensor sig = sigmoid(tape, big);
  const Tensor th = alnet::tanh(tape, big);
  for (real v : sig.data()) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
  for (real v : th.data()) {
    EXPECT_GE(v, -1);
    EXPECT_LE(v, 1);
  }
}

TEST(AvgPool, Values) {
  Tape tape(false);
  Tensor c(Shape{1, 4, 4}, real{2.5});
  const Tensor pooled = avg_pool2d(tape, c, 2);
  for (real v : pooled.data()) EXPECT_EQ(v, real(2.5));
  Tensor x(Shape{1, 2, 2}, std::vector<real>{1, 2, 3, 4});
  EXPECT_EQ(avg_pool2d(tape, x, 2).item(), real(2.5));
  Tensor m(Shape{512, 7, 7});
  EXPECT_EQ(avg_pool2d(tape, m, 7).shape(), (Shape{512, 1, 1}));
  EXPECT_EQ(global_avg_pool(tape, m).shape(), (Shape{1, 512}));
  EXPECT_THROW(avg_pool2d(tape, x, 3), Error);
}

TEST(Linear, Values) {
  Tape tape(false);
  Tensor x(Shape{2}, std::vector<real>{1, 1});
  Tensor eye(Shape{2, 2}, std::vector<real>{1, 0, 0, 1});
  Tensor zero_b(Shape{2}, real{0});
  EXPECT_TRUE(linear(tape, x, eye, zero_b).bitwise_equal(x));
  Tensor b(Shape{2}, std::vector<real>{3, -4});
  EXPECT_TRUE(linear(tape, x, Tensor(Shape{2, 2}, real{0}), b).bitwise_equal(b));
  Tensor w(Shape{2, 2}, std::vector<real>{1, 2, 3, 4});
  Tensor y = linear(tape, x, w, zero_b);
  EXPECT_EQ(y.data()[0], 3);
  EXPECT_EQ(y.data()[1], 7);
  EXPECT_THROW(linear(tape, Tensor(Shape{3}), w, zero_b), Error);
}

TEST(SoftmaxCrossEntropy, Values) {
  Tape tape(false);
  std::size_t label0 = 0;
  auto uniform = softmax_cross_entropy(tape, Tensor(Shape{8}, real{0.3f}), {&label0, 1});
  for (real p : uniform.probs.data()) EXPECT_NEAR(p, 0.125, 1e-7);
  EXPECT_NEAR(uniform.loss.value, std::log(8.0), 1e-6);
  auto sat = softmax_cross_entropy(tape, Tensor(Shape{2}, std::vector<real>{100, 0}), {&label0, 1});
  EXPECT_LT(sat.loss.value, 1e-6);
  std::size_t label2 = 2;
  auto hand = softmax_cross_entropy(tape, Tensor(Shape{3}, std::vector<real>{1, 2, 3}), {&label2, 1});
  // -log(e^3 / (e + e^2 + e^3)) = log(1 + e^-1 + e^-2)
  EXPECT_NEAR(hand.loss.value, 0.40760596, 1e-6);
  std::size_t bad = 3;
  EXPECT_THROW(softmax_cross_entropy(tape, Tensor(Shape{3}), {&bad, 1}), Error);
}

TEST(SoftmaxCrossEntropy, ProbabilitiesNormalized) {
  Rng rng(6);
  Tape tape(false);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor z = random_tensor({4, 9}, rng, -40, 40);
    Tensor p = softmax(tape, z);
    for (std::size_t n = 0; n < 4; ++n) {
      double s = 0;
      for (std::size_t i = 0; i < 9; ++i) {
        const real v = p.data()[n * 9 + i];
        EXPECT_GE(v, 0);
        EXPECT_LE(v, 1);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Backward, SumAndSquare) {
  Tensor x(Shape{3}, std::vector<real>{1, -2, 5});
  x.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum(tape, x));
  }
  for (real g : x.grad()) EXPECT_EQ(g, 1);

  Tensor s = Tensor::scalar(3);
  s.set_requires_grad(true);
  Tape tape;
  tape.backward(mul(tape, s, s));
  EXPECT_EQ(s.grad()[0], 6);
}

TEST(Backward, DisconnectedTensorKeepsZeroGrad) {
  Tensor x(Shape{2}, real{1}), unused(Shape{2}, real{1});
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(tape, x));
  for (real g : unused.grad()) EXPECT_EQ(g, 0);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tensor x(Shape{2}, real{1});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = scale(tape, x, 2.0);
  try {
    tape.backward(y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Usage);
  }
}

TEST(Backward, FrozenTensorsAreNotRecorded) {
  Tensor frozen(Shape{2}, real{1});
  Tape tape;
  Tensor y = scale(tape, frozen, 2.0);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Determinism, SameSeedSameForwardAndGrads) {
  auto run = [](std::vector<real>& values, std::vector<real>& grads) {
    Rng rng(11);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    w.set_requires_grad(true);
    Tape tape;
    Tensor y = relu(tape, conv2d(tape, x, w, Tensor(), 1, 1));
    tape.backward(sum(tape, y));
    values.assign(y.data().begin(), y.data().end());
    grads.assign(w.grad().begin(), w.grad().end());
  };
  std::vector<real> v1, g1, v2, g2;
  run(v1, g1);
  run(v2, g2);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(g1, g2);
}

TEST(GradCheck, DisconnectedParameterSkipped) {
  Tensor x(Shape{1, 2}, std::vector<real>{0.5f, -0.25f});
  Tensor w(Shape{2, 2}, std::vector<real>{0.1f, 0.2f, 0.3f, 0.4f});
  Tensor unused(Shape{3}, real{0.7f});
  std::vector<std::size_t> labels{1};
  ParamList params{{"w", w, ParamRole::Weight}, {"unused", unused, ParamRole::Weight}};
  LossFn fn = [&](Tape& tape) {
    return softmax_cross_entropy(tape, linear(tape, x, w, Tensor()), labels).loss;
  };
  GradCheckReport r = grad_check(fn, params, {});
  EXPECT_EQ(r.skipped, 3u);
  EXPECT_EQ(r.checked, 4u);
  EXPECT_TRUE(r.passed());
}

