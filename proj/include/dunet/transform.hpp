#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "dunet/autograd.hpp"
#include "dunet/conv.hpp"
#include "dunet/random.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Planar transforms
// ---------------------------------------------------------------------------
//
// A TransformSpec maps points of its frame as  p' = A * mirror(p)  where the
// horizontal mirror (x -> W-1-x, about the pixel-centre axis) applies only
// when `flip` is set, followed by the 2x3 affine A.  When the transform was
// built from rotation/scale about the frame centre (`centred` set), it can be
// re-expressed exactly in a downscaled frame (e.g. the heatmap lattice) by
// rebuilding A about that frame's own centre; this keeps a pure flip an exact
// column reversal at every scale.  `flip_pairs` lists landmark index pairs
// (left/right counterparts) swapped by a mirror.

struct TransformSpec {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};  // row-major 2x3
  bool flip = false;
  int frame_w = 0;
  int frame_h = 0;
  std::vector<std::pair<int, int>> flip_pairs;

  bool centred = false;  // semantic form below is valid
  double rot_deg = 0.0;
  double scl = 1.0;

  static TransformSpec identity(int w, int h) {
    TransformSpec t;
    t.frame_w = w;
    t.frame_h = h;
    t.centred = true;
    return t;
  }

  // Rotation (degrees, about the frame centre) then uniform scale, with an
  // optional leading mirror.
  static TransformSpec centred_transform(int w, int h, double rot_deg, double scale,
                                         bool flip,
                                         std::vector<std::pair<int, int>> flip_pairs = {}) {
    TransformSpec t;
    t.frame_w = w;
    t.frame_h = h;
    t.flip = flip;
    t.flip_pairs = std::move(flip_pairs);
    t.centred = true;
    t.rot_deg = rot_deg;
    t.scl = scale;
    t.rebuild_centred_matrix();
    return t;
  }

  // Arbitrary affine (no mirror), e.g. a crop-and-resize warp.
  static TransformSpec from_affine(int w, int h, const std::array<double, 6>& m) {
    TransformSpec t;
    t.frame_w = w;
    t.frame_h = h;
    t.m = m;
    return t;
  }

  void rebuild_centred_matrix() {
    const double th = rot_deg * M_PI / 180.0;
    const double l00 = scl * std::cos(th), l01 = -scl * std::sin(th);
    const double l10 = scl * std::sin(th), l11 = scl * std::cos(th);
    const double cx = (frame_w - 1) / 2.0, cy = (frame_h - 1) / 2.0;
    m = {l00, l01, cx - (l00 * cx + l01 * cy), l10, l11, cy - (l10 * cx + l11 * cy)};
  }

  bool affine_is_identity(double tol = 1e-12) const {
    return std::abs(m[0] - 1) < tol && std::abs(m[1]) < tol && std::abs(m[2]) < tol &&
           std::abs(m[3]) < tol && std::abs(m[4] - 1) < tol && std::abs(m[5]) < tol;
  }

  std::array<double, 2> apply_point(double x, double y) const {
    if (flip) x = (frame_w - 1) - x;
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }

  // A^{-1} as a 2x3 (the mirror is handled separately by callers).
  std::array<double, 6> inverse_affine() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-12) {
      throw ConfigError("transform: affine part is singular");
    }
    const double i00 = m[4] / det, i01 = -m[1] / det;
    const double i10 = -m[3] / det, i11 = m[0] / det;
    return {i00, i01, -(i00 * m[2] + i01 * m[5]),
            i10, i11, -(i10 * m[2] + i11 * m[5])};
  }

  // The same transform expressed in a frame downscaled by `divisor`.
  TransformSpec scaled_frame(int divisor) const {
    if (divisor < 1 || frame_w % divisor != 0 || frame_h % divisor != 0) {
      throw ConfigError("transform: frame not divisible by requested stride");
    }
    TransformSpec t = *this;
    t.frame_w = frame_w / divisor;
    t.frame_h = frame_h / divisor;
    if (centred) {
      t.rebuild_centred_matrix();
    } else {
      // Linear part is scale-free; only the translation shrinks.
      t.m[2] /= divisor;
      t.m[5] /= divisor;
    }
    return t;
  }
};

// Landmarks: slot k of the result holds the mapped position of slot k's
// mirror counterpart when flipping (so left/right semantics stay attached to
// the correct slot), then the affine map.
inline std::vector<std::array<double, 2>> apply_to_landmarks(
    const TransformSpec& t, const std::vector<std::array<double, 2>>& pts) {
  std::vector<int> perm(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) perm[i] = static_cast<int>(i);
  if (t.flip) {
    for (const auto& [a, b] : t.flip_pairs) {
      if (a < 0 || b < 0 || a >= static_cast<int>(pts.size()) ||
          b >= static_cast<int>(pts.size())) {
        throw ConfigError("flip pairs reference landmark outside the set");
      }
      std::swap(perm[a], perm[b]);
    }
  }
  std::vector<std::array<double, 2>> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[perm[i]];
    out[i] = t.apply_point(p[0], p[1]);
  }
  return out;
}

namespace detail {

// out(q) = in(mirror(A^{-1} q)) with bilinear sampling, zero outside.
template <typename T>
void warp_plane_gather(const T* in, int ih, int iw, T* out, int oh, int ow,
                       const std::array<double, 6>& inv, bool mirror) {
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double sx = inv[0] * x + inv[1] * y + inv[2];
      const double sy = inv[3] * x + inv[4] * y + inv[5];
      if (mirror) sx = (iw - 1) - sx;
      out[y * ow + x] =
          bilinear_sample(in, ih, iw, static_cast<T>(sy), static_cast<T>(sx));
    }
  }
}

// Transpose of the gather: scatter d_out back through the same weights.
template <typename T>
void warp_plane_scatter(T* d_in, int ih, int iw, const T* d_out, int oh, int ow,
                        const std::array<double, 6>& inv, bool mirror) {
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double sx = inv[0] * x + inv[1] * y + inv[2];
      const double sy = inv[3] * x + inv[4] * y + inv[5];
      if (mirror) sx = (iw - 1) - sx;
      bilinear_scatter(d_in, ih, iw, static_cast<T>(sy), static_cast<T>(sx),
                       d_out[y * ow + x]);
    }
  }
}

inline std::vector<int> channel_perm(const TransformSpec& t, int channels) {
  std::vector<int> perm(channels);
  for (int i = 0; i < channels; ++i) perm[i] = i;
  if (t.flip) {
    for (const auto& [a, b] : t.flip_pairs) {
      if (a < 0 || b < 0 || a >= channels || b >= channels) {
        throw ConfigError("flip pairs reference channel outside the stack");
      }
      std::swap(perm[a], perm[b]);
    }
  }
  return perm;
}

}  // namespace detail

// Plain image warp (no gradients).  The spec's frame must match the input;
// the output frame defaults to the same size (pass out_h/out_w for crops).
template <typename T>
Tensor<T> apply_to_image(const TransformSpec& t, const Tensor<T>& img, int out_h = -1,
                         int out_w = -1) {
  if (img.w() != t.frame_w || img.h() != t.frame_h) {
    throw ShapeError("width", "apply_to_image: frame mismatch");
  }
  if (out_h < 0) out_h = img.h();
  if (out_w < 0) out_w = img.w();
  Tensor<T> out(img.n(), img.c(), out_h, out_w);
  const auto inv = t.inverse_affine();
  for (int n = 0; n < img.n(); ++n) {
    for (int c = 0; c < img.c(); ++c) {
      detail::warp_plane_gather(img.sample(n) + c * img.plane(), img.h(), img.w(),
                                out.sample(n) + c * out.plane(), out_h, out_w, inv,
                                t.flip);
    }
  }
  return out;
}

// Plain heatmap warp: the image-frame spec is re-expressed on the heatmap
// lattice (frame_w / maps.w() gives the stride), mirrors permute the channel
// stack via flip_pairs, and a pure mirror is an exact column reversal.
template <typename T>
Tensor<T> apply_to_heatmaps(const TransformSpec& t, const Tensor<T>& maps) {
  if (t.frame_w % maps.w() != 0) {
    throw ShapeError("width", "apply_to_heatmaps: incompatible resolutions");
  }
  const TransformSpec th = t.scaled_frame(t.frame_w / maps.w());
  if (th.frame_h != maps.h()) {
    throw ShapeError("height", "apply_to_heatmaps: incompatible resolutions");
  }
  const auto perm = detail::channel_perm(th, maps.c());
  Tensor<T> out(maps.n(), maps.c(), maps.h(), maps.w());
  const bool pure_flip = th.flip && th.affine_is_identity();
  const auto inv = th.inverse_affine();
  for (int n = 0; n < maps.n(); ++n) {
    for (int c = 0; c < maps.c(); ++c) {
      const T* src = maps.sample(n) + perm[c] * maps.plane();
      T* dst = out.sample(n) + c * out.plane();
      if (pure_flip) {
        for (int y = 0; y < maps.h(); ++y) {
          for (int x = 0; x < maps.w(); ++x) {
            dst[y * maps.w() + x] = src[y * maps.w() + (maps.w() - 1 - x)];
          }
        }
      } else {
        detail::warp_plane_gather(src, maps.h(), maps.w(), dst, maps.h(), maps.w(), inv,
                                  th.flip);
      }
    }
  }
  return out;
}

// Differentiable heatmap warp: sample i of the batch is warped by specs[i]
// (given in the image frame).  Gradients flow through the bilinear weights
// (the transforms themselves are fixed inputs).
template <typename T>
Var<T> warp_heatmaps(const Var<T>& h, const std::vector<TransformSpec>& specs) {
  const Tensor<T>& ht = h.tensor();
  if (static_cast<int>(specs.size()) != ht.n()) {
    throw ShapeError("batch", "warp_heatmaps: one spec per sample required");
  }
  struct SampleWarp {
    std::array<double, 6> inv;
    std::vector<int> perm;
    bool flip = false;
    bool pure_flip = false;
  };
  auto plan = std::make_shared<std::vector<SampleWarp>>();
  plan->reserve(specs.size());
  for (const auto& s : specs) {
    if (s.frame_w % ht.w() != 0) {
      throw ShapeError("width", "warp_heatmaps: incompatible resolutions");
    }
    const TransformSpec th = s.scaled_frame(s.frame_w / ht.w());
    if (th.frame_h != ht.h()) {
      throw ShapeError("height", "warp_heatmaps: incompatible resolutions");
    }
    SampleWarp w;
    w.inv = th.inverse_affine();
    w.perm = detail::channel_perm(th, ht.c());
    w.flip = th.flip;
    w.pure_flip = th.flip && th.affine_is_identity();
    plan->push_back(std::move(w));
  }

  Tensor<T> out(ht.n(), ht.c(), ht.h(), ht.w());
  for (int n = 0; n < ht.n(); ++n) {
    const auto& w = (*plan)[n];
    for (int c = 0; c < ht.c(); ++c) {
      const T* src = ht.sample(n) + w.perm[c] * ht.plane();
      T* dst = out.sample(n) + c * out.plane();
      if (w.pure_flip) {
        for (int y = 0; y < ht.h(); ++y) {
          for (int x = 0; x < ht.w(); ++x) {
            dst[y * ht.w() + x] = src[y * ht.w() + (ht.w() - 1 - x)];
          }
        }
      } else {
        detail::warp_plane_gather(src, ht.h(), ht.w(), dst, ht.h(), ht.w(), w.inv,
                                  w.flip);
      }
    }
  }

  return make_var<T>(std::move(out), {h}, [plan](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const Tensor<T>& o = n.value;
    const auto& g = o.grad();
    auto& pg = p.value.grad();
    for (int b = 0; b < o.n(); ++b) {
      const auto& w = (*plan)[b];
      for (int c = 0; c < o.c(); ++c) {
        const T* gsrc = g.data() + o.index(b, c, 0, 0);
        T* gdst = pg.data() + p.value.index(b, w.perm[c], 0, 0);
        if (w.pure_flip) {
          for (int y = 0; y < o.h(); ++y) {
            for (int x = 0; x < o.w(); ++x) {
              gdst[y * o.w() + (o.w() - 1 - x)] += gsrc[y * o.w() + x];
            }
          }
        } else {
          detail::warp_plane_scatter(gdst, o.h(), o.w(), gsrc, o.h(), o.w(), w.inv,
                                     w.flip);
        }
      }
    }
  });
}

}  // namespace dunet
