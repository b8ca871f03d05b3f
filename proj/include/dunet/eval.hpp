#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "dunet/common.hpp"
#include "dunet/data.hpp"
#include "dunet/heatmap.hpp"
#include "dunet/loss.hpp"
#include "dunet/topology.hpp"
#include "dunet/trainer.hpp"
#include "dunet/transform.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Normalised mean error
// ---------------------------------------------------------------------------
//
// Mean Euclidean distance between predicted and ground-truth landmarks,
// divided by a per-set normaliser:
//   EyeCentre      - distance between the two eye centroids;
//   OuterEyeCorner - distance between the two outer eye corners;
//   BboxDiagonal   - diagonal of the ground-truth landmark bounding box;
//   BboxSize       - sqrt(width * height) of that box.
// Eye modes know the 68-point contour index sets; the 5-point toy layout uses
// its eye slots 0 and 1 for both eye definitions.

enum class NmeMode { EyeCentre, OuterEyeCorner, BboxDiagonal, BboxSize };

inline const char* nme_mode_name(NmeMode m) {
  switch (m) {
    case NmeMode::EyeCentre: return "eye-centre";
    case NmeMode::OuterEyeCorner: return "outer-eye-corner";
    case NmeMode::BboxDiagonal: return "bbox-diagonal";
    case NmeMode::BboxSize: return "bbox-size";
  }
  throw ConfigError("unknown NME mode");
}

inline NmeMode nme_mode_from_name(const std::string& s) {
  if (s == "eye-centre") return NmeMode::EyeCentre;
  if (s == "outer-eye-corner") return NmeMode::OuterEyeCorner;
  if (s == "bbox-diagonal") return NmeMode::BboxDiagonal;
  if (s == "bbox-size") return NmeMode::BboxSize;
  throw ConfigError("unknown NME mode '" + s + "'");
}

namespace detail {

inline std::array<double, 2> centroid(const Landmarks& pts, int first, int last) {
  double sx = 0.0, sy = 0.0;
  for (int i = first; i < last; ++i) {
    sx += pts[i][0];
    sy += pts[i][1];
  }
  const int n = last - first;
  return {sx / n, sy / n};
}

inline double point_dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
}

inline double nme_normaliser(const Landmarks& gt, NmeMode mode) {
  const int n = static_cast<int>(gt.size());
  switch (mode) {
    case NmeMode::EyeCentre:
      if (n == 68) return point_dist(centroid(gt, 36, 42), centroid(gt, 42, 48));
      if (n == 5) return point_dist(gt[0], gt[1]);
      throw ConfigError("eye-centre NME needs the 68- or 5-point layout");
    case NmeMode::OuterEyeCorner:
      if (n == 68) return point_dist(gt[36], gt[45]);
      if (n == 5) return point_dist(gt[0], gt[1]);
      throw ConfigError("outer-eye-corner NME needs the 68- or 5-point layout");
    case NmeMode::BboxDiagonal:
    case NmeMode::BboxSize: {
      double x0 = gt[0][0], x1 = gt[0][0], y0 = gt[0][1], y1 = gt[0][1];
      for (const auto& p : gt) {
        x0 = std::min(x0, p[0]);
        x1 = std::max(x1, p[0]);
        y0 = std::min(y0, p[1]);
        y1 = std::max(y1, p[1]);
      }
      const double w = x1 - x0, h = y1 - y0;
      return mode == NmeMode::BboxDiagonal ? std::sqrt(w * w + h * h)
                                           : std::sqrt(w * h);
    }
  }
  throw ConfigError("unknown NME mode");
}

}  // namespace detail

inline double nme(const Landmarks& pred, const Landmarks& gt, NmeMode mode,
                  const std::vector<bool>* visibility = nullptr) {
  if (pred.size() != gt.size() || gt.empty()) {
    throw ShapeError("channels", "nme: prediction/ground-truth sizes differ");
  }
  if (visibility != nullptr && visibility->size() != gt.size()) {
    throw ShapeError("channels", "nme: visibility size mismatch");
  }
  const double norm = detail::nme_normaliser(gt, mode);
  if (!(norm > 1e-9)) {
    throw NumericError("nme: degenerate normaliser (coincident eyes or flat box)");
  }
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (visibility != nullptr && !(*visibility)[i]) continue;
    sum += detail::point_dist(pred[i], gt[i]);
    ++count;
  }
  if (count == 0) throw NumericError("nme: no visible landmarks");
  return (sum / count) / norm;
}

// ---------------------------------------------------------------------------
// Cumulative error distribution
// ---------------------------------------------------------------------------

struct CedCurve {
  // Point 0 is the curve's start (threshold 0, fraction of exactly-zero
  // errors); points 1..n_bins sit on uniform thresholds ending at
  // max_threshold.  auc is then exactly the trapezoid integral of these
  // points divided by max_threshold, so all-zero errors integrate to 1.
  std::vector<double> thresholds;
  std::vector<double> fractions;   // share of samples with error <= threshold
  double auc = 0.0;
  double failure_rate = 0.0;       // share of samples with error > cutoff
  double failure_cutoff = 0.08;
};

inline CedCurve ced(const std::vector<double>& errors, double max_threshold,
                    int n_bins, double failure_cutoff = 0.08) {
  if (errors.empty()) throw ConfigError("ced: no errors given");
  if (!(max_threshold > 0.0)) throw ConfigError("ced: max_threshold must be positive");
  if (n_bins < 1) throw ConfigError("ced: need at least one bin");
  CedCurve c;
  c.failure_cutoff = failure_cutoff;
  const double n = static_cast<double>(errors.size());
  auto fraction_at = [&](double t) {
    std::size_t ok = 0;
    for (double e : errors) ok += e <= t ? 1 : 0;
    return static_cast<double>(ok) / n;
  };
  c.thresholds.reserve(n_bins + 1);
  c.fractions.reserve(n_bins + 1);
  for (int b = 0; b <= n_bins; ++b) {
    const double t = max_threshold * b / n_bins;
    c.thresholds.push_back(t);
    c.fractions.push_back(fraction_at(t));
  }
  double area = 0.0;
  for (int b = 1; b <= n_bins; ++b) {
    area += 0.5 * (c.fractions[b - 1] + c.fractions[b]) *
            (c.thresholds[b] - c.thresholds[b - 1]);
  }
  c.auc = area / max_threshold;
  std::size_t failures = 0;
  for (double e : errors) failures += e > failure_cutoff ? 1 : 0;
  c.failure_rate = static_cast<double>(failures) / n;
  return c;
}

inline void write_ced_csv(std::ostream& os, const CedCurve& c) {
  os << "threshold,fraction\n";
  os << std::setprecision(12);
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    os << c.thresholds[i] << "," << c.fractions[i] << "\n";
  }
}

// Minimal SVG 1.1 polyline plot of the curve (no plotting dependency).
inline void write_ced_svg(std::ostream& os, const CedCurve& c) {
  const int w = 480, h = 360, ml = 50, mb = 40, mt = 20, mr = 20;
  const double max_t = c.thresholds.back();
  auto sx = [&](double t) { return ml + (w - ml - mr) * (t / max_t); };
  auto sy = [&](double f) { return h - mb - (h - mb - mt) * f; };
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << w
     << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "  <rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "  <line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  os << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
     << h - mb << "\" stroke=\"black\"/>\n";
  os << "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    os << sx(c.thresholds[i]) << "," << sy(c.fractions[i]);
    if (i + 1 < c.thresholds.size()) os << " ";
  }
  os << "\"/>\n";
  os << "  <text x=\"" << (ml + (w - ml - mr) / 2) << "\" y=\"" << (h - 8)
     << "\" text-anchor=\"middle\" font-size=\"13\">NME threshold (max " << max_t
     << ")</text>\n";
  os << "  <text x=\"14\" y=\"" << (mt + (h - mb - mt) / 2)
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 "
     << (mt + (h - mb - mt) / 2) << ")\">fraction of images</text>\n";
  os << "  <text x=\"" << (w - mr - 6) << "\" y=\"" << (mt + 14)
     << "\" text-anchor=\"end\" font-size=\"13\">AUC " << c.auc << "</text>\n";
  os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

// Decoded landmarks of the final stack head for one image batch.  CE-trained
// heads emit logits, so scores pass through a sigmoid before decoding (argmax
// position is unaffected; the visibility threshold needs probabilities).
template <typename T>
std::vector<std::vector<DecodedLandmark>> predict_landmarks(StackedModel<T>& model,
                                                            const Tensor<T>& images,
                                                            PgLossKind kind) {
  auto logits = model.forward(Var<T>(images, false), false);
  Var<T> maps = kind == PgLossKind::CrossEntropy ? sigmoid(logits.back())
                                                 : logits.back();
  const Tensor<T>& m = maps.tensor();
  const int stride = images.h() / m.h();
  std::vector<std::vector<DecodedLandmark>> out;
  out.reserve(m.n());
  for (int i = 0; i < m.n(); ++i) out.push_back(decode_landmarks(m, i, stride));
  return out;
}

inline Landmarks to_points(const std::vector<DecodedLandmark>& d) {
  Landmarks out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = {d[i].x, d[i].y};
  return out;
}

// Per-sample NMEs of a model over a dataset (final stack head, eval mode).
template <typename T>
std::vector<double> model_nmes(StackedModel<T>& model, const Dataset& ds,
                               NmeMode mode, PgLossKind kind,
                               int eval_batch = 8) {
  if (ds.empty()) throw ConfigError("eval: empty dataset");
  std::vector<double> errs;
  errs.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += eval_batch) {
    const std::size_t stop = std::min(ds.size(), start + eval_batch);
    std::vector<const Tensor<float>*> imgs;
    for (std::size_t i = start; i < stop; ++i) imgs.push_back(&ds[i].image);
    const auto preds = predict_landmarks(model, detail::stack_images<T>(imgs), kind);
    for (std::size_t i = start; i < stop; ++i) {
      errs.push_back(nme(to_points(preds[i - start]), ds[i].landmarks, mode));
    }
  }
  return errs;
}

// ---------------------------------------------------------------------------
// Coherence probe
// ---------------------------------------------------------------------------
//
// Measures how far a predictor is from transform-equivariance.  For each
// sample I and transform T:
//   map term      : sum of squares between H(T o I) and warp(H(I), T);
//   landmark term : mean image-px distance between decode(H(T o I)) and
//                   decode(warp(H(I), T)).
// Both comparisons push H(I) through the same heatmap-lattice warp operator
// the training loss uses, so a perfectly equivariant predictor scores exactly
// zero under any transform draw.  The callable maps a (1,3,H,W) image tensor
// to a (1,K,h,w) probability-map tensor.

struct CoherenceReport {
  double map_discrepancy = 0.0;       // mean over samples
  double landmark_discrepancy = 0.0;  // mean over samples and landmarks, image px
  int n = 0;
};

template <typename Fn>
CoherenceReport coherence_probe(Fn&& predict, const Dataset& ds,
                                const std::vector<TransformSpec>& transforms) {
  if (ds.size() != transforms.size()) {
    throw ShapeError("batch", "coherence probe: one transform per sample required");
  }
  if (ds.empty()) throw ConfigError("coherence probe: empty dataset");
  CoherenceReport rep;
  rep.n = static_cast<int>(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const TransformSpec& t = transforms[i];
    const Tensor<float> warped_img = apply_to_image(t, ds[i].image);
    const Tensor<float> h_trans = predict(warped_img);
    const Tensor<float> h_orig = predict(ds[i].image);
    const Tensor<float> h_orig_warped = apply_to_heatmaps(t, h_orig);
    if (!h_trans.same_shape(h_orig_warped)) {
      throw ShapeError("channels", "coherence probe: predictor output shape drift");
    }
    double sq = 0.0;
    for (std::size_t k = 0; k < h_trans.vec().size(); ++k) {
      const double d = static_cast<double>(h_trans.vec()[k]) - h_orig_warped.vec()[k];
      sq += d * d;
    }
    rep.map_discrepancy += sq;
    const int stride = ds[i].image.h() / h_trans.h();
    const auto d_trans = decode_landmarks(h_trans, 0, stride);
    const auto d_warped = decode_landmarks(h_orig_warped, 0, stride);
    double px = 0.0;
    for (std::size_t k = 0; k < d_trans.size(); ++k) {
      px += detail::point_dist({d_trans[k].x, d_trans[k].y},
                               {d_warped[k].x, d_warped[k].y});
    }
    rep.landmark_discrepancy += px / static_cast<double>(d_trans.size());
  }
  rep.map_discrepancy /= rep.n;
  rep.landmark_discrepancy /= rep.n;
  return rep;
}

// Probe adapter for a trained stacked model (final head, eval mode).
template <typename T>
CoherenceReport model_coherence(StackedModel<T>& model, const Dataset& ds,
                                const std::vector<TransformSpec>& transforms,
                                PgLossKind kind) {
  auto predict = [&](const Tensor<float>& img) {
    std::vector<const Tensor<float>*> one{&img};
    auto logits = model.forward(Var<T>(detail::stack_images<T>(one), false), false);
    Var<T> maps = kind == PgLossKind::CrossEntropy ? sigmoid(logits.back())
                                                   : logits.back();
    Tensor<float> out(1, maps.tensor().c(), maps.tensor().h(), maps.tensor().w());
    for (std::size_t k = 0; k < out.vec().size(); ++k) {
      out.vec()[k] = static_cast<float>(maps.tensor().vec()[k]);
    }
    return out;
  };
  return coherence_probe(predict, ds, transforms);
}

// Deterministic transform draws for probing (same family as augmentation).
inline std::vector<TransformSpec> probe_transforms(
    const Dataset& ds, const std::vector<std::pair<int, int>>& flip_pairs,
    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TransformSpec> out;
  out.reserve(ds.size());
  for (const auto& s : ds) {
    const bool flip = rng.bernoulli(0.5);
    const double rot = rng.uniform(-40.0, 40.0);
    const double scl = rng.uniform(0.8, 1.2);
    out.push_back(TransformSpec::centred_transform(s.image.w(), s.image.h(), rot, scl,
                                                   flip, flip_pairs));
  }
  return out;
}

}  // namespace dunet
