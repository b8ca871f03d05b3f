#pragma once

#include <vector>

#include "dunet/ops.hpp"
#include "dunet/transform.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Coherence-regularised heatmap loss
// ---------------------------------------------------------------------------
//
// Each sample appears twice in a batch: once as-is ("orig") and once under a
// known spatial transform ("trans"), with ground-truth heatmap stacks for
// both views.  The loss ties the twin predictions together:
//
//   per sample:  lambda * Lpp  +  Lpg1  +  Lpg2
//
//   Lpg1 / Lpg2 - prediction-vs-ground-truth terms for the two views, either
//                 summed elementwise sigmoid cross-entropy on the raw logits
//                 or a summed squared error on the maps;
//   Lpp         - squared difference between the transformed view's maps and
//                 the original view's maps pushed through the transform
//                 (differentiable warp, so both branches receive gradient).
//
// All three terms are sums over pixels and channels; the total is the mean
// over the batch.  In CrossEntropy mode the inputs are pre-sigmoid logits
// (Lpp compares the sigmoid'ed maps); in Mse mode the inputs are already
// maps and are compared directly.

enum class PgLossKind { CrossEntropy, Mse };

struct CoherentLossParts {
  double pp = 0.0;   // batch-mean map-coherence term (before lambda)
  double pg1 = 0.0;  // batch-mean ground-truth term, original view
  double pg2 = 0.0;  // batch-mean ground-truth term, transformed view
  double total = 0.0;
};

template <typename T>
Var<T> coherent_loss(const Var<T>& h_orig, const Var<T>& h_trans,
                     const Tensor<T>& gt_orig, const Tensor<T>& gt_trans,
                     const std::vector<TransformSpec>& specs, double lambda,
                     PgLossKind kind, CoherentLossParts* parts = nullptr) {
  const Tensor<T>& ho = h_orig.tensor();
  if (!ho.same_shape(h_trans.tensor()) || !ho.same_shape(gt_orig) ||
      !ho.same_shape(gt_trans)) {
    throw ShapeError("channels", "coherent_loss: prediction/target shapes differ");
  }
  if (static_cast<int>(specs.size()) != ho.n()) {
    throw ShapeError("batch", "coherent_loss: one transform per sample required");
  }
  const double inv_n = 1.0 / ho.n();

  Var<T> pg1, pg2, maps_o, maps_t;
  if (kind == PgLossKind::CrossEntropy) {
    pg1 = sigmoid_ce_sum(h_orig, constant(gt_orig));
    pg2 = sigmoid_ce_sum(h_trans, constant(gt_trans));
    maps_o = sigmoid(h_orig);
    maps_t = sigmoid(h_trans);
  } else {
    pg1 = sum_sq_diff(h_orig, constant(gt_orig));
    pg2 = sum_sq_diff(h_trans, constant(gt_trans));
    maps_o = h_orig;
    maps_t = h_trans;
  }
  Var<T> warped = warp_heatmaps(maps_o, specs);
  Var<T> pp = sum_sq_diff(maps_t, warped);

  if (parts != nullptr) {
    parts->pp = static_cast<double>(pp.item()) * inv_n;
    parts->pg1 = static_cast<double>(pg1.item()) * inv_n;
    parts->pg2 = static_cast<double>(pg2.item()) * inv_n;
    parts->total = lambda * parts->pp + parts->pg1 + parts->pg2;
  }
  return add(scale(pp, lambda * inv_n), scale(add(pg1, pg2), inv_n));
}

}  // namespace dunet
