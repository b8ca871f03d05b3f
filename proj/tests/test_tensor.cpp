#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dunet/autograd.hpp"
#include "dunet/ops.hpp"
#include "dunet/random.hpp"
#include "dunet/tensor.hpp"

using namespace dunet;

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t(2, 3, 4, 5);
  EXPECT_EQ(t.n(), 2);
  EXPECT_EQ(t.c(), 3);
  EXPECT_EQ(t.h(), 4);
  EXPECT_EQ(t.w(), 5);
  EXPECT_EQ(t.numel(), 2u * 3 * 4 * 5);
  t.at(1, 2, 3, 4) = 7.0f;
  EXPECT_FLOAT_EQ(t.data()[t.numel() - 1], 7.0f);  // last element in NCHW order
  t.at(0, 0, 0, 1) = 3.0f;
  EXPECT_FLOAT_EQ(t.data()[1], 3.0f);  // width is innermost
}

TEST(Tensor, RejectsNonPositiveDims) {
  EXPECT_THROW(Tensor<float>(0, 1, 1, 1), ShapeError);
  EXPECT_THROW(Tensor<float>(1, -2, 1, 1), ShapeError);
  try {
    Tensor<float> t(1, 0, 4, 4);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.axis(), "channels");
  }
}

TEST(Tensor, DumpLoadRoundTrip) {
  Rng rng(42);
  Tensor<float> t(2, 3, 5, 7);
  t.fill_normal(rng, 0.0, 1.0);
  std::stringstream ss;
  t.dump(ss);
  Tensor<float> u = Tensor<float>::load(ss);
  ASSERT_TRUE(u.same_shape(t));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    EXPECT_EQ(t.vec()[i], u.vec()[i]);  // bit-exact float32 round trip
  }
}

TEST(Tensor, DumpHeaderBytes) {
  Tensor<float> t(1, 2, 3, 4);
  std::stringstream ss;
  t.dump(ss);
  const std::string s = ss.str();
  ASSERT_GE(s.size(), 20u);
  EXPECT_EQ(s.substr(0, 4), "DUT1");
  // Little-endian uint32 dims: 1, 2, 3, 4.
  const unsigned char* b = reinterpret_cast<const unsigned char*>(s.data()) + 4;
  EXPECT_EQ(b[0], 1u);
  EXPECT_EQ(b[4], 2u);
  EXPECT_EQ(b[8], 3u);
  EXPECT_EQ(b[12], 4u);
  EXPECT_EQ(s.size(), 4u + 16u + 4u * t.numel());
}

TEST(Tensor, LoadRejectsBadMagic) {
  std::stringstream ss;
  ss << "NOPE";
  EXPECT_THROW(Tensor<float>::load(ss), ParseError);
}

TEST(Tensor, LoadRejectsTruncated) {
  Tensor<float> t(1, 1, 2, 2);
  std::stringstream ss;
  t.dump(ss);
  std::string s = ss.str();
  s.resize(s.size() - 3);
  std::stringstream in(s);
  EXPECT_THROW(Tensor<float>::load(in), ParseError);
}

TEST(Rng, DeterministicAcrossInstances) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
  }
  Rng c(123), d(124);
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(Rng, SaveRestoreContinuesStream) {
  Rng a(7);
  for (int i = 0; i < 17; ++i) a.normal();  // odd count leaves a Box-Muller spare
  const std::string state = a.save_state();
  Rng b(0);
  b.load_state(state);
  for (int i = 0; i < 100; ++i) {
    ASSERT_DOUBLE_EQ(a.normal(), b.normal());
    ASSERT_DOUBLE_EQ(a.uniform(), b.uniform());
  }
}

TEST(Rng, UniformBoundsAndMoments) {
  Rng rng(99);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng rng(5);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sumsq / n, 1.0, 0.02);
}

TEST(Rng, UniformIntCoversRange) {
  Rng rng(11);
  bool seen[5] = {};
  for (int i = 0; i < 200; ++i) {
    const auto v = rng.uniform_int(2, 6);
    ASSERT_GE(v, 2);
    ASSERT_LE(v, 6);
    seen[v - 2] = true;
  }
  for (bool s : seen) EXPECT_TRUE(s);
}

TEST(Autograd, SimpleChainRule) {
  // loss = sum((relu(x) * 3)^2 summed) for x = [-1, 2]: only x=2 contributes,
  // loss = 36, d/dx = 2*9*x = 36 at x=2, 0 at x=-1.
  Tensor<double> xt(1, 1, 1, 2);
  xt.vec() = {-1.0, 2.0};
  Var<double> x(xt, true);
  Var<double> y = scale(relu(x), 3.0);
  Var<double> loss = sum_sq_diff(y, constant(Tensor<double>(1, 1, 1, 2)));
  EXPECT_DOUBLE_EQ(loss.item(), 36.0);
  loss.backward();
  EXPECT_DOUBLE_EQ(x.tensor().grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.tensor().grad()[1], 36.0);
}

TEST(Autograd, GradAccumulatesOverUses) {
  // loss = sum(x + x) -> dx = 2 per element.
  Tensor<double> xt(1, 1, 2, 2);
  xt.fill(1.5);
  Var<double> x(xt, true);
  Var<double> loss = sum_all(add(x, x));
  loss.backward();
  for (double g : x.tensor().grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Autograd, DiamondGraphTopoOrder) {
  // y = x*2, z = x*3, loss = sum(y + z) -> dx = 5.
  Tensor<double> xt(1, 1, 1, 3);
  xt.fill(1.0);
  Var<double> x(xt, true);
  Var<double> loss = sum_all(add(scale(x, 2.0), scale(x, 3.0)));
  loss.backward();
  for (double g : x.tensor().grad()) EXPECT_DOUBLE_EQ(g, 5.0);
}

TEST(Autograd, NoGradInputsBuildNoGraph) {
  Tensor<float> xt(1, 1, 2, 2);
  xt.fill(1.0f);
  Var<float> x(xt, false);
  Var<float> y = relu(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
  EXPECT_THROW(y.backward(), ConfigError);
}

TEST(Autograd, NonFiniteForwardIsHardError) {
  Tensor<float> xt(1, 1, 1, 2);
  xt.vec() = {1.0f, std::numeric_limits<float>::quiet_NaN()};
  Var<float> x(xt, true);
  EXPECT_THROW(relu(x), NumericError);

  Tensor<float> big(1, 1, 1, 1);
  big.vec() = {std::numeric_limits<float>::infinity()};
  Var<float> x2(big, true);
  EXPECT_THROW(scale(x2, 2.0f), NumericError);
}

TEST(Autograd, NonFiniteBackwardIsHardError) {
  Tensor<double> xt(1, 1, 1, 1);
  xt.fill(2.0);
  Var<double> x(xt, true);
  Var<double> y = scale(x, 1.0);
  // Poison the seed gradient by hand.
  y.tensor().grad()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(y.backward(false), NumericError);
}
