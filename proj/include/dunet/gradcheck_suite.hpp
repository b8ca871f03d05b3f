#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dunet/conv.hpp"
#include "dunet/gradcheck.hpp"
#include "dunet/loss.hpp"
#include "dunet/ops.hpp"
#include "dunet/topology.hpp"
#include "dunet/transform.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Named gradient-check suite
// ---------------------------------------------------------------------------
//
// One finite-difference check per differentiable operation, plus an
// end-to-end check of a small stacked model, all in double precision with
// fixed seeds.  The CLI and the test binaries share this list so "checked"
// means the same thing everywhere.

struct GradSuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 1e-3;
  bool passed = false;
  double seconds = 0.0;
};

namespace detail {

inline Tensor<double> suite_normal(Rng& rng, int n, int c, int h, int w) {
  Tensor<double> t(n, c, h, w);
  t.fill_normal(rng, 0.0, 1.0);
  return t;
}

// Magnitudes bounded away from zero so ReLU/max kinks sit far from the
// finite-difference probes.
inline Tensor<double> suite_signed(Rng& rng, int n, int c, int h, int w) {
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.vec()) {
    v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.2, 1.0);
  }
  return t;
}

using SuiteBody = std::function<GradCheckReport(Rng&)>;

struct SuiteCase {
  std::string name;
  SuiteBody body;
};

inline std::vector<SuiteCase> make_grad_suite() {
  std::vector<SuiteCase> cases;
  auto add_case = [&](std::string name, SuiteBody body) {
    cases.push_back({std::move(name), std::move(body)});
  };

  add_case("relu", [](Rng& rng) {
    Var<double> x(suite_signed(rng, 2, 2, 3, 3), true);
    Var<double> tgt(suite_normal(rng, 2, 2, 3, 3), false);
    return grad_check([&] { return sum_sq_diff(relu(x), tgt); }, {{"x", x}});
  });

  add_case("sigmoid", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 2, 3, 3), true);
    Var<double> tgt(suite_normal(rng, 2, 2, 3, 3), false);
    return grad_check([&] { return sum_sq_diff(sigmoid(x), tgt); }, {{"x", x}});
  });

  add_case("add", [](Rng& rng) {
    Var<double> a(suite_normal(rng, 1, 2, 2, 2), true);
    Var<double> b(suite_normal(rng, 1, 2, 2, 2), true);
    Var<double> tgt(suite_normal(rng, 1, 2, 2, 2), false);
    return grad_check([&] { return sum_sq_diff(add(a, b), tgt); },
                      {{"a", a}, {"b", b}});
  });

  add_case("scale", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 1, 2, 2, 2), true);
    Var<double> tgt(suite_normal(rng, 1, 2, 2, 2), false);
    return grad_check([&] { return sum_sq_diff(scale(x, -1.7), tgt); }, {{"x", x}});
  });

  add_case("concat-channels", [](Rng& rng) {
    Var<double> a(suite_normal(rng, 2, 2, 2, 2), true);
    Var<double> b(suite_normal(rng, 2, 3, 2, 2), true);
    Var<double> tgt(suite_normal(rng, 2, 5, 2, 2), false);
    return grad_check(
        [&] { return sum_sq_diff(concat_channels<double>({a, b}), tgt); },
        {{"a", a}, {"b", b}});
  });

  add_case("slice-channels", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 5, 2, 2), true);
    Var<double> tgt(suite_normal(rng, 2, 2, 2, 2), false);
    return grad_check([&] { return sum_sq_diff(slice_channels(x, 1, 3), tgt); },
                      {{"x", x}});
  });

  add_case("replicate-channels", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 2, 2, 2), true);
    Var<double> tgt(suite_normal(rng, 2, 6, 2, 2), false);
    return grad_check([&] { return sum_sq_diff(replicate_channels(x, 3), tgt); },
                      {{"x", x}});
  });

  add_case("max-pool", [](Rng& rng) {
    Var<double> x(suite_signed(rng, 2, 2, 4, 4), true);
    Var<double> tgt(suite_normal(rng, 2, 2, 2, 2), false);
    return grad_check([&] { return sum_sq_diff(max_pool2d(x), tgt); }, {{"x", x}});
  });

  add_case("upsample-nearest", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 2, 3, 3), true);
    Var<double> tgt(suite_normal(rng, 2, 2, 6, 6), false);
    return grad_check([&] { return sum_sq_diff(upsample_nearest2x(x), tgt); },
                      {{"x", x}});
  });

  add_case("batch-norm-train", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 3, 3, 3), true);
    Var<double> tgt(suite_normal(rng, 2, 3, 3, 3), false);
    auto bn = BatchNorm<double>::make(3);
    bn.gamma.tensor().fill_uniform(rng, 0.5, 1.5);
    bn.beta.tensor().fill_uniform(rng, -0.3, 0.3);
    return grad_check([&] { return sum_sq_diff(batch_norm(x, bn, true), tgt); },
                      {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  });

  add_case("batch-norm-eval", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 3, 3, 3), true);
    Var<double> tgt(suite_normal(rng, 2, 3, 3, 3), false);
    auto bn = BatchNorm<double>::make(3);
    bn.gamma.tensor().fill_uniform(rng, 0.5, 1.5);
    bn.beta.tensor().fill_uniform(rng, -0.3, 0.3);
    bn.running_mean.fill_uniform(rng, -0.5, 0.5);
    bn.running_var.fill_uniform(rng, 0.5, 2.0);
    return grad_check([&] { return sum_sq_diff(batch_norm(x, bn, false), tgt); },
                      {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  });

  add_case("sum-all", [](Rng& rng) {
    Var<double> x(suite_normal(rng, 2, 2, 3, 3), true);
    return grad_check([&] { return sum_all(sigmoid(x)); }, {{"x", x}});
  });

  add_case("sum-sq-diff", [](Rng& rng) {
    Var<double> a(suite_normal(rng, 2, 2, 3, 3), true);
    Var<double> b(suite_normal(rng, 2, 2, 3, 3), true);
    return grad_check([&] { return sum_sq_diff(a, b); }, {{"a", a}, {"b", b}});
  });

  add_case("sigmoid-ce", [](Rng& rng) {
    Var<double> logits(suite_normal(rng, 2, 2, 3, 3), true);
    Tensor<double> t(2, 2, 3, 3);
    t.fill_uniform(rng, 0.0, 1.0);
    Var<double> target(t, false);
    return grad_check([&] { return sigmoid_ce_sum(logits, target); },
                      {{"logits", logits}});
  });

  add_case("conv2d", [](Rng& rng) {
    auto p = ConvParams<double>::make(3, 4, 3, 1, -1, 1, &rng);
    p.bias.tensor().fill_uniform(rng, -0.2, 0.2);
    Var<double> x(suite_normal(rng, 2, 3, 5, 5), true);
    Var<double> tgt(suite_normal(rng, 2, 4, 5, 5), false);
    return grad_check([&] { return sum_sq_diff(conv2d(x, p), tgt); },
                      {{"x", x}, {"kernel", p.kernel}, {"bias", p.bias}});
  });

  add_case("conv2d-strided", [](Rng& rng) {
    auto p = ConvParams<double>::make(2, 3, 3, 2, 1, 1, &rng);
    p.bias.tensor().fill_uniform(rng, -0.2, 0.2);
    Var<double> x(suite_normal(rng, 1, 2, 6, 6), true);
    Var<double> tgt(suite_normal(rng, 1, 3, 3, 3), false);
    return grad_check([&] { return sum_sq_diff(conv2d(x, p), tgt); },
                      {{"x", x}, {"kernel", p.kernel}, {"bias", p.bias}});
  });

  add_case("conv2d-grouped", [](Rng& rng) {
    auto p = ConvParams<double>::make(4, 4, 3, 1, -1, 2, &rng);
    p.bias.tensor().fill_uniform(rng, -0.2, 0.2);
    Var<double> x(suite_normal(rng, 1, 4, 4, 4), true);
    Var<double> tgt(suite_normal(rng, 1, 4, 4, 4), false);
    return grad_check([&] { return sum_sq_diff(conv2d(x, p), tgt); },
                      {{"x", x}, {"kernel", p.kernel}, {"bias", p.bias}});
  });

  add_case("separable-conv", [](Rng& rng) {
    auto p = SeparableConvParams<double>::make(3, 4, 3, 1, &rng);
    Var<double> x(suite_normal(rng, 1, 3, 4, 4), true);
    Var<double> tgt(suite_normal(rng, 1, 4, 4, 4), false);
    return grad_check(
        [&] { return sum_sq_diff(depthwise_separable_conv(x, p), tgt); },
        {{"x", x},
         {"dw-kernel", p.depthwise.kernel},
         {"dw-bias", p.depthwise.bias},
         {"pw-kernel", p.pointwise.kernel},
         {"pw-bias", p.pointwise.bias}});
  });

  add_case("deformable-conv", [](Rng& rng) {
    auto p = ConvParams<double>::make(2, 3, 3, 1, -1, 1, &rng);
    p.bias.tensor().fill_uniform(rng, -0.2, 0.2);
    Var<double> x(suite_normal(rng, 1, 2, 5, 5), true);
    // Fractional offsets keep the bilinear sampling away from the integer
    // lattice, where its derivative has kinks.
    Tensor<double> off(1, 18, 5, 5);
    off.fill_uniform(rng, 0.1, 0.4);
    Var<double> offsets(off, true);
    Var<double> tgt(suite_normal(rng, 1, 3, 5, 5), false);
    return grad_check(
        [&] { return sum_sq_diff(deformable_conv2d(x, p, offsets), tgt); },
        {{"x", x}, {"kernel", p.kernel}, {"bias", p.bias}, {"offsets", offsets}});
  });

  add_case("warp-heatmaps", [](Rng& rng) {
    Var<double> h(suite_normal(rng, 2, 2, 8, 8), true);
    Var<double> tgt(suite_normal(rng, 2, 2, 8, 8), false);
    // Image-frame transforms; the warp scales them onto the 8x8 lattice.
    const std::vector<TransformSpec> specs = {
        TransformSpec::centred_transform(16, 16, 25.0, 1.1, true, {{0, 1}}),
        TransformSpec::centred_transform(16, 16, -10.0, 0.9, false, {{0, 1}}),
    };
    return grad_check([&] { return sum_sq_diff(warp_heatmaps(h, specs), tgt); },
                      {{"h", h}});
  });

  for (PgLossKind kind : {PgLossKind::CrossEntropy, PgLossKind::Mse}) {
    const std::string name =
        kind == PgLossKind::CrossEntropy ? "coherent-loss-ce" : "coherent-loss-mse";
    add_case(name, [kind](Rng& rng) {
      Var<double> ho(suite_normal(rng, 2, 2, 8, 8), true);
      Var<double> ht(suite_normal(rng, 2, 2, 8, 8), true);
      Tensor<double> go(2, 2, 8, 8), gt(2, 2, 8, 8);
      go.fill_uniform(rng, 0.0, 1.0);
      gt.fill_uniform(rng, 0.0, 1.0);
      const std::vector<TransformSpec> specs = {
          TransformSpec::centred_transform(16, 16, 15.0, 1.05, true, {{0, 1}}),
          TransformSpec::centred_transform(16, 16, -30.0, 1.15, false, {{0, 1}}),
      };
      return grad_check(
          [&] { return coherent_loss(ho, ht, go, gt, specs, 0.7, kind); },
          {{"h-orig", ho}, {"h-trans", ht}});
    });
  }

  return cases;
}

}  // namespace detail

inline std::vector<std::string> grad_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : detail::make_grad_suite()) names.push_back(c.name);
  names.push_back("stacked-model");
  return names;
}

// End-to-end check of a stacked model (every layer kind in one graph).
// Directional probes with a small step: the graph crosses ReLU/argmax kinks,
// and larger steps let the central difference average across them.
inline GradSuiteResult run_model_grad_check(int width = 16, int stacks = 2,
                                            double tol = 1e-3) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(59);
  StackSpec spec;
  spec.topology.kind = TopologyKind::Sat3;
  spec.topology.down_steps = 3;
  spec.topology.input_resolution = 16;
  spec.topology.block = BlockSpec{BlockKind::Cab, width, 4, 2};
  spec.num_stacks = stacks;
  spec.num_landmarks = 5;
  spec.with_deformable = true;
  StackedModel<double> model(spec, &rng);
  ParamRegistry<double> reg;
  model.register_tensors(reg);
  // Zero-initialised offset convs park the deformable sampling points exactly
  // on the bilinear-interpolation kink; nudge them to a fractional value.
  for (auto& [name, p] : reg.params) {
    if (name.find("/offset/bias") != std::string::npos) {
      p.tensor().fill_uniform(rng, 0.1, 0.4);
    }
  }

  Tensor<double> img(1, 3, 32, 32);
  img.fill_uniform(rng, 0.0, 1.0);
  Var<double> x(img, true);
  std::vector<Var<double>> tgts;
  for (int s = 0; s < stacks; ++s) {
    Tensor<double> t(1, spec.num_landmarks, 16, 16);
    t.fill_uniform(rng, 0.0, 1.0);
    tgts.emplace_back(t, false);
  }

  ParamList params = reg.params;
  params.emplace_back("input", x);
  auto forward = [&]() {
    auto logits = model.forward(x, true);
    Var<double> loss = sum_sq_diff(logits[0], tgts[0]);
    for (int s = 1; s < stacks; ++s) {
      loss = add(loss, sum_sq_diff(logits[s], tgts[s]));
    }
    return loss;
  };
  const auto report = grad_check_directional(forward, params, rng, 1, 1e-6, 4);

  GradSuiteResult r;
  r.name = "stacked-model";
  r.max_rel_err = report.max_rel_err();
  r.tol = tol;
  r.passed = report.ok(tol);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Runs the op checks (all of them, or the one matching `only`), appending the
// stacked-model check when `with_model` is set.
inline std::vector<GradSuiteResult> run_grad_suite(const std::string& only = "",
                                                   bool with_model = false,
                                                   double tol = 1e-3) {
  std::vector<GradSuiteResult> results;
  std::uint64_t seed = 1000;
  for (const auto& c : detail::make_grad_suite()) {
    ++seed;
    if (!only.empty() && c.name != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    const GradCheckReport rep = c.body(rng);
    GradSuiteResult r;
    r.name = c.name;
    r.max_rel_err = rep.max_rel_err();
    r.tol = tol;
    r.passed = rep.ok(tol);
    r.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(r);
  }
  if ((only.empty() && with_model) || only == "stacked-model") {
    results.push_back(run_model_grad_check(16, 2, tol));
  }
  if (results.empty()) {
    throw ConfigError("gradcheck: unknown op '" + only + "'");
  }
  return results;
}

}  // namespace dunet
