#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "dunet/tensor.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Heatmap codec
// ---------------------------------------------------------------------------
//
// Encoding: one channel per landmark at 1/stride resolution.  The channel is
// an unnormalised Gaussian (sigma in heatmap pixels) around the continuous
// sub-pixel centre landmark/stride, truncated radially at 3*sigma.  Keeping
// the centre continuous (rather than snapping it to the lattice) is what lets
// the decoder below recover positions to well under a pixel; the peak lattice
// value is still <= 1, with equality exactly when the centre falls on a
// lattice point.
//
// Decoding: per channel, the argmax lattice point (first in row-major order
// on ties) plus a quarter-pixel shift along each axis toward the larger
// neighbour, mapped back to the image frame by multiplying by stride.

// Peaks at or below this value decode as invisible; ground-truth channels for
// invisible landmarks are all-zero hence land below it by construction.
constexpr double kVisibilityThreshold = 0.01;

struct DecodedLandmark {
  double x = 0.0;  // image-frame coordinates
  double y = 0.0;
  double score = 0.0;   // peak heatmap value
  bool visible = true;  // score above kVisibilityThreshold
};

template <typename T>
Tensor<T> render_heatmaps(const std::vector<std::array<double, 2>>& landmarks,
                          int img_h, int img_w, int stride = 2, double sigma = 1.0,
                          const std::vector<bool>* visibility = nullptr) {
  if (stride < 1 || img_h % stride != 0 || img_w % stride != 0) {
    throw ShapeError("height", "render_heatmaps: resolution not divisible by stride");
  }
  if (landmarks.empty()) {
    throw ShapeError("channels", "render_heatmaps: empty landmark set");
  }
  if (visibility != nullptr && visibility->size() != landmarks.size()) {
    throw ShapeError("channels", "render_heatmaps: visibility size mismatch");
  }
  const int hh = img_h / stride, hw = img_w / stride;
  const double radius = 3.0 * sigma;
  Tensor<T> maps(1, static_cast<int>(landmarks.size()), hh, hw);
  for (std::size_t k = 0; k < landmarks.size(); ++k) {
    if (visibility != nullptr && !(*visibility)[k]) continue;  // all-zero channel
    const double mx = landmarks[k][0] / stride;
    const double my = landmarks[k][1] / stride;
    const int x0 = std::max(0, static_cast<int>(std::ceil(mx - radius)));
    const int x1 = std::min(hw - 1, static_cast<int>(std::floor(mx + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(my - radius)));
    const int y1 = std::min(hh - 1, static_cast<int>(std::floor(my + radius)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - mx, dy = y - my;
        const double r2 = dx * dx + dy * dy;
        if (r2 > radius * radius) continue;
        maps.at(0, static_cast<int>(k), y, x) =
            static_cast<T>(std::exp(-r2 / (2.0 * sigma * sigma)));
      }
    }
  }
  return maps;
}

template <typename T>
std::vector<DecodedLandmark> decode_landmarks(const Tensor<T>& maps, int sample = 0,
                                              int stride = 2) {
  if (sample < 0 || sample >= maps.n()) {
    throw ShapeError("batch", "decode_landmarks: sample index out of range");
  }
  std::vector<DecodedLandmark> out(maps.c());
  const int hh = maps.h(), hw = maps.w();
  for (int k = 0; k < maps.c(); ++k) {
    const T* plane = maps.sample(sample) + static_cast<std::size_t>(k) * maps.plane();
    int by = 0, bx = 0;
    T best = plane[0];
    for (int y = 0; y < hh; ++y) {
      for (int x = 0; x < hw; ++x) {
        if (plane[y * hw + x] > best) {
          best = plane[y * hw + x];
          by = y;
          bx = x;
        }
      }
    }
    double fx = bx, fy = by;
    // Quarter-pixel refinement, skipped at the lattice border.
    if (bx > 0 && bx < hw - 1) {
      const T diff = plane[by * hw + bx + 1] - plane[by * hw + bx - 1];
      if (diff > T(0)) fx += 0.25;
      if (diff < T(0)) fx -= 0.25;
    }
    if (by > 0 && by < hh - 1) {
      const T diff = plane[(by + 1) * hw + bx] - plane[(by - 1) * hw + bx];
      if (diff > T(0)) fy += 0.25;
      if (diff < T(0)) fy -= 0.25;
    }
    out[k] = {fx * stride, fy * stride, static_cast<double>(best),
              static_cast<double>(best) > kVisibilityThreshold};
  }
  return out;
}

}  // namespace dunet
