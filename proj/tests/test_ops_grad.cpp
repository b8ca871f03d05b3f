#include <gtest/gtest.h>

#include <cmath>

#include "dunet/gradcheck.hpp"
#include "dunet/ops.hpp"

using namespace dunet;

namespace {

// Random tensor with entries in +-[0.2, 1.2]: bounded away from the ReLU kink
// and from max-pool ties.
Tensor<double> rand_signed(Rng& rng, int n, int c, int h, int w) {
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.vec()) {
    const double mag = rng.uniform(0.2, 1.2);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

Tensor<double> rand_normal(Rng& rng, int n, int c, int h, int w) {
  Tensor<double> t(n, c, h, w);
  t.fill_normal(rng, 0.0, 1.0);
  return t;
}

}  // namespace

TEST(OpsForward, ReluSigmoidValues) {
  Tensor<double> xt(1, 1, 1, 4);
  xt.vec() = {-2.0, 0.0, 3.0, -0.5};
  Var<double> x(xt, false);
  Var<double> r = relu(x);
  EXPECT_DOUBLE_EQ(r.tensor().vec()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.tensor().vec()[1], 0.0);
  EXPECT_DOUBLE_EQ(r.tensor().vec()[2], 3.0);

  Tensor<double> zt(1, 1, 1, 4);
  zt.vec() = {0.0, 100.0, -100.0, std::log(3.0)};
  Var<double> z(zt, false);
  Var<double> s = sigmoid(z);
  EXPECT_DOUBLE_EQ(s.tensor().vec()[0], 0.5);
  EXPECT_NEAR(s.tensor().vec()[1], 1.0, 1e-12);  // stable at large magnitude
  EXPECT_NEAR(s.tensor().vec()[2], 0.0, 1e-12);
  EXPECT_NEAR(s.tensor().vec()[3], 0.75, 1e-12);  // sigmoid(ln 3) = 3/4
}

TEST(OpsForward, ConcatSliceReplicate) {
  Rng rng(1);
  Var<double> a(rand_normal(rng, 2, 2, 3, 3), false);
  Var<double> b(rand_normal(rng, 2, 3, 3, 3), false);
  Var<double> cat = concat_channels<double>({a, b});
  ASSERT_EQ(cat.tensor().c(), 5);
  EXPECT_DOUBLE_EQ(cat.tensor().at(1, 3, 2, 1), b.tensor().at(1, 1, 2, 1));
  EXPECT_DOUBLE_EQ(cat.tensor().at(0, 1, 0, 2), a.tensor().at(0, 1, 0, 2));

  Var<double> sl = slice_channels(cat, 2, 5);
  ASSERT_EQ(sl.tensor().c(), 3);
  EXPECT_DOUBLE_EQ(sl.tensor().at(1, 0, 1, 1), b.tensor().at(1, 0, 1, 1));

  Var<double> rep = replicate_channels(a, 3);
  ASSERT_EQ(rep.tensor().c(), 6);
  for (int r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(rep.tensor().at(1, 2 * r + 1, 0, 0), a.tensor().at(1, 1, 0, 0));
  }
  EXPECT_THROW(slice_channels(cat, 4, 6), ShapeError);
}

TEST(OpsForward, MaxPoolValuesAndTieBreak) {
  Tensor<double> xt(1, 1, 2, 4);
  // Windows: [5 5; 1 2] (tie on 5) and [7 0; 3 7] (tie on 7).
  xt.vec() = {5.0, 5.0, 7.0, 0.0, 1.0, 2.0, 3.0, 7.0};
  Var<double> x(xt, true);
  Var<double> y = max_pool2d(x);
  ASSERT_EQ(y.tensor().h(), 1);
  ASSERT_EQ(y.tensor().w(), 2);
  EXPECT_DOUBLE_EQ(y.tensor().vec()[0], 5.0);
  EXPECT_DOUBLE_EQ(y.tensor().vec()[1], 7.0);
  Var<double> loss = sum_all(y);
  loss.backward();
  const auto& g = x.tensor().grad();
  // Ties resolve to the first element in row-major window order.
  EXPECT_DOUBLE_EQ(g[0], 1.0);  // (0,0) wins over (0,1)
  EXPECT_DOUBLE_EQ(g[1], 0.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);  // (0,2) wins over (1,3)
  EXPECT_DOUBLE_EQ(g[7], 0.0);
  EXPECT_THROW(max_pool2d(Var<double>(Tensor<double>(1, 1, 3, 4), false)), ShapeError);
}

TEST(OpsForward, UpsampleNearest) {
  Tensor<double> xt(1, 1, 2, 2);
  xt.vec() = {1.0, 2.0, 3.0, 4.0};
  Var<double> y = upsample_nearest2x(Var<double>(xt, false));
  ASSERT_EQ(y.tensor().h(), 4);
  const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_DOUBLE_EQ(y.tensor().vec()[i], want[i]);
  }
}

TEST(OpsForward, BatchNormTrainingStats) {
  // Single channel, values {1,3}: mean 2, biased var 1.
  Tensor<double> xt(1, 1, 1, 2);
  xt.vec() = {1.0, 3.0};
  auto bn = BatchNorm<double>::make(1);
  Var<double> y = batch_norm(Var<double>(xt, false), bn, true);
  const double denom = std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.tensor().vec()[0], -1.0 / denom, 1e-12);
  EXPECT_NEAR(y.tensor().vec()[1], 1.0 / denom, 1e-12);
  // Running stats: (1-m)*init + m*batch with m = 0.1.
  EXPECT_NEAR(bn.running_mean.vec()[0], 0.2, 1e-12);
  EXPECT_NEAR(bn.running_var.vec()[0], 0.9 * 1.0 + 0.1 * 1.0, 1e-12);
}

TEST(OpsForward, BatchNormEvalUsesRunningStats) {
  auto bn = BatchNorm<double>::make(1);
  bn.running_mean.vec()[0] = 1.0;
  bn.running_var.vec()[0] = 4.0;
  Tensor<double> xt(1, 1, 1, 2);
  xt.vec() = {1.0, 5.0};
  Var<double> y = batch_norm(Var<double>(xt, false), bn, false);
  EXPECT_NEAR(y.tensor().vec()[0], 0.0, 1e-9);
  EXPECT_NEAR(y.tensor().vec()[1], 4.0 / std::sqrt(4.0 + 1e-5), 1e-9);
  // Eval mode must not touch the running buffers.
  EXPECT_DOUBLE_EQ(bn.running_mean.vec()[0], 1.0);
  EXPECT_DOUBLE_EQ(bn.running_var.vec()[0], 4.0);
}

TEST(OpsForward, BatchNormPoolsOverBatchAndSpace) {
  // Two samples with different means; the channel statistic spans both.
  Tensor<double> xt(2, 1, 1, 2);
  xt.vec() = {0.0, 0.0, 4.0, 4.0};  // mean 2, var 4
  auto bn = BatchNorm<double>::make(1);
  Var<double> y = batch_norm(Var<double>(xt, false), bn, true);
  const double denom = std::sqrt(4.0 + 1e-5);
  EXPECT_NEAR(y.tensor().vec()[0], -2.0 / denom, 1e-12);
  EXPECT_NEAR(y.tensor().vec()[3], 2.0 / denom, 1e-12);
}

TEST(OpsForward, LossValues) {
  Tensor<double> at(1, 1, 1, 3), bt(1, 1, 1, 3);
  at.vec() = {1.0, 2.0, 3.0};
  bt.vec() = {0.0, 4.0, 3.0};
  Var<double> a(at, false), b(bt, false);
  EXPECT_DOUBLE_EQ((sum_sq_diff(a, b).item()), 1.0 + 4.0 + 0.0);

  // Cross-entropy vs the naive formula at moderate logits.
  Tensor<double> zt(1, 1, 1, 2), tt(1, 1, 1, 2);
  zt.vec() = {0.7, -1.3};
  tt.vec() = {1.0, 0.25};
  double want = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-zt.vec()[i]));
    want += -tt.vec()[i] * std::log(s) - (1.0 - tt.vec()[i]) * std::log(1.0 - s);
  }
  EXPECT_NEAR((sigmoid_ce_sum(Var<double>(zt, false), Var<double>(tt, false)).item()),
              want, 1e-12);

  // Stable at extreme logits: ce(100, 1) ~ 0, ce(-100, 0) ~ 0.
  Tensor<double> ze(1, 1, 1, 2), te(1, 1, 1, 2);
  ze.vec() = {100.0, -100.0};
  te.vec() = {1.0, 0.0};
  EXPECT_NEAR((sigmoid_ce_sum(Var<double>(ze, false), Var<double>(te, false)).item()),
              0.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Finite-difference checks
// ---------------------------------------------------------------------------

TEST(OpsGrad, Relu) {
  Rng rng(10);
  Var<double> x(rand_signed(rng, 2, 2, 3, 3), true);
  Var<double> tgt(rand_normal(rng, 2, 2, 3, 3), false);
  auto fwd = [&] { return sum_sq_diff(relu(x), tgt); };
  EXPECT_LT(grad_check(fwd, {{"x", x}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, Sigmoid) {
  Rng rng(11);
  Var<double> x(rand_normal(rng, 2, 2, 3, 3), true);
  Var<double> tgt(rand_normal(rng, 2, 2, 3, 3), false);
  auto fwd = [&] { return sum_sq_diff(sigmoid(x), tgt); };
  EXPECT_LT(grad_check(fwd, {{"x", x}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, AddScaleBothBranches) {
  Rng rng(12);
  Var<double> a(rand_normal(rng, 1, 2, 2, 2), true);
  Var<double> b(rand_normal(rng, 1, 2, 2, 2), true);
  Var<double> tgt(rand_normal(rng, 1, 2, 2, 2), false);
  auto fwd = [&] { return sum_sq_diff(add(scale(a, 0.7), scale(b, -1.3)), tgt); };
  EXPECT_LT(grad_check(fwd, {{"a", a}, {"b", b}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, ConcatSliceReplicate) {
  Rng rng(13);
  Var<double> a(rand_normal(rng, 2, 2, 2, 2), true);
  Var<double> b(rand_normal(rng, 2, 3, 2, 2), true);
  Var<double> tgt(rand_normal(rng, 2, 7, 2, 2), false);
  auto fwd = [&] {
    Var<double> cat = concat_channels<double>({a, b});          // 5 ch
    Var<double> sl = slice_channels(cat, 1, 3);                 // 2 ch
    Var<double> rep = replicate_channels(sl, 2);                // 4 ch
    Var<double> both = concat_channels<double>({rep, slice_channels(cat, 2, 5)});
    return sum_sq_diff(both, tgt);
  };
  EXPECT_LT(grad_check(fwd, {{"a", a}, {"b", b}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, MaxPoolAndUpsample) {
  Rng rng(14);
  Var<double> x(rand_signed(rng, 2, 2, 4, 4), true);
  Var<double> tgt(rand_normal(rng, 2, 2, 4, 4), false);
  auto fwd = [&] { return sum_sq_diff(upsample_nearest2x(max_pool2d(x)), tgt); };
  EXPECT_LT(grad_check(fwd, {{"x", x}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, BatchNormTraining) {
  Rng rng(15);
  Var<double> x(rand_normal(rng, 2, 3, 3, 3), true);
  Var<double> tgt(rand_normal(rng, 2, 3, 3, 3), false);
  auto bn = BatchNorm<double>::make(3);
  bn.gamma.tensor().fill_uniform(rng, 0.5, 1.5);
  bn.beta.tensor().fill_uniform(rng, -0.3, 0.3);
  auto fwd = [&] { return sum_sq_diff(batch_norm(x, bn, true), tgt); };
  auto report = grad_check(fwd, {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  EXPECT_LT(report.max_rel_err(), 1e-6);
}

TEST(OpsGrad, BatchNormEval) {
  Rng rng(16);
  Var<double> x(rand_normal(rng, 2, 3, 3, 3), true);
  Var<double> tgt(rand_normal(rng, 2, 3, 3, 3), false);
  auto bn = BatchNorm<double>::make(3);
  bn.running_mean.fill_uniform(rng, -0.5, 0.5);
  bn.running_var.fill_uniform(rng, 0.5, 2.0);
  auto fwd = [&] { return sum_sq_diff(batch_norm(x, bn, false), tgt); };
  auto report = grad_check(fwd, {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  EXPECT_LT(report.max_rel_err(), 1e-6);
}

TEST(OpsGrad, SumSqDiffBothSides) {
  Rng rng(17);
  Var<double> a(rand_normal(rng, 1, 2, 3, 3), true);
  Var<double> b(rand_normal(rng, 1, 2, 3, 3), true);
  auto fwd = [&] { return sum_sq_diff(a, b); };
  EXPECT_LT(grad_check(fwd, {{"a", a}, {"b", b}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, SigmoidCrossEntropy) {
  Rng rng(18);
  Var<double> z(rand_normal(rng, 1, 3, 4, 4), true);
  Tensor<double> tt(1, 3, 4, 4);
  tt.fill_uniform(rng, 0.0, 1.0);
  Var<double> t(tt, false);
  auto fwd = [&] { return sigmoid_ce_sum(z, t); };
  EXPECT_LT(grad_check(fwd, {{"z", z}}).max_rel_err(), 1e-6);
}

TEST(OpsGrad, DirectionalMatchesExhaustive) {
  Rng rng(19);
  Var<double> x(rand_normal(rng, 1, 2, 3, 3), true);
  Var<double> tgt(rand_normal(rng, 1, 2, 3, 3), false);
  auto fwd = [&] { return sum_sq_diff(sigmoid(x), tgt); };
  Rng dir_rng(20);
  auto report = grad_check_directional(fwd, {{"x", x}}, dir_rng, 4);
  EXPECT_LT(report.max_rel_err(), 1e-6);
}
