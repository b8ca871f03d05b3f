#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "dunet/autograd.hpp"
#include "dunet/ops.hpp"
#include "dunet/random.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Convolutions: standard (grouped), depthwise-separable, deformable.
// ---------------------------------------------------------------------------
//
// The standard path lowers each sample to a column matrix (im2col) and runs
// the contraction as a GEMM; 1x1/stride-1 convolutions skip the lowering and
// depthwise convolutions use a direct kernel.  All batch loops are serial, so
// reductions have a fixed order and repeated runs are bit-identical.

// Multiply-accumulate tally, used by the architecture cost estimators.  Only
// convolution arithmetic is counted (elementwise work is negligible).
inline unsigned long long& flop_counter() {
  static unsigned long long count = 0;
  return count;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// C(m,n) = A(m,k) * B(k,n), optionally accumulating.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  flop_counter() += 2ull * m * k * n;
  CMapMat<T> A(a, m, k), B(b, k, n);
  MapMat<T> C(c, m, n);
  if (acc) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

// C(m,n) = A(m,k) * B(n,k)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  flop_counter() += 2ull * m * k * n;
  CMapMat<T> A(a, m, k), B(b, n, k);
  MapMat<T> C(c, m, n);
  if (acc) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

// C(m,n) = A(k,m)^T * B(k,n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  flop_counter() += 2ull * m * k * n;
  CMapMat<T> A(a, k, m), B(b, k, n);
  MapMat<T> C(c, m, n);
  if (acc) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

struct ConvGeom {
  int in_c, out_c, k, stride, pad, groups;
  int ih, iw, oh, ow;
  int kk() const { return k * k; }
  int col_rows() const { return in_c * k * k; }        // full im2col height
  int group_in() const { return in_c / groups; }
  int group_out() const { return out_c / groups; }
  int group_rows() const { return group_in() * k * k; }
  std::size_t opix() const { return static_cast<std::size_t>(oh) * ow; }
};

// Lower one (C,H,W) slab to a (C*k*k, OH*OW) column matrix with zero padding.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t plane = static_cast<std::size_t>(g.ih) * g.iw;
  const std::size_t opix = g.opix();
  for (int c = 0; c < g.in_c; ++c) {
    const T* xc = x + c * plane;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * g.kk() + ky * g.k + kx) * opix;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int y = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.ow;
          if (y < 0 || y >= g.ih) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(y) * g.iw;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int x0 = ox * g.stride - g.pad + kx;
            dst[ox] = (x0 >= 0 && x0 < g.iw) ? src[x0] : T(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-add a column matrix back onto the input slab.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t plane = static_cast<std::size_t>(g.ih) * g.iw;
  const std::size_t opix = g.opix();
  for (int c = 0; c < g.in_c; ++c) {
    T* xc = dx + c * plane;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * g.kk() + ky * g.k + kx) * opix;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int y = oy * g.stride - g.pad + ky;
          if (y < 0 || y >= g.ih) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.ow;
          T* dst = xc + static_cast<std::size_t>(y) * g.iw;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int x0 = ox * g.stride - g.pad + kx;
            if (x0 >= 0 && x0 < g.iw) dst[x0] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Learnable parameters plus the geometry of one convolution.
template <typename T>
struct ConvParams {
  Var<T> kernel;  // (out_c, in_c/groups, k, k)
  Var<T> bias;    // (out_c, 1, 1, 1)
  int stride = 1;
  int padding = -1;  // -1 selects "same" padding (odd kernels only)
  int groups = 1;

  int out_channels() const { return kernel.tensor().n(); }
  int in_channels() const { return kernel.tensor().c() * groups; }
  int ksize() const { return kernel.tensor().h(); }

  // He-normal weight init (fan-in), zero bias.  Passing rng == nullptr leaves
  // the kernel zero-filled, which some tests rely on.
  static ConvParams make(int in_c, int out_c, int k, int stride = 1, int padding = -1,
                         int groups = 1, Rng* rng = nullptr) {
    if (in_c % groups != 0 || out_c % groups != 0) {
      throw ShapeError("channels", "conv: channels not divisible by groups");
    }
    if (padding < 0 && k % 2 == 0) {
      throw ConfigError("conv: same padding requires an odd kernel size");
    }
    ConvParams p;
    Tensor<T> kern(out_c, in_c / groups, k, k);
    if (rng != nullptr) {
      const double fan_in = static_cast<double>(in_c / groups) * k * k;
      kern.fill_normal(*rng, 0.0, std::sqrt(2.0 / fan_in));
    }
    p.kernel = Var<T>(std::move(kern), true);
    p.bias = Var<T>(Tensor<T>(out_c, 1, 1, 1), true);
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return p;
  }

  detail::ConvGeom geom(const Tensor<T>& x) const {
    if (x.c() != in_channels()) {
      throw ShapeError("channels", "conv: input has " + std::to_string(x.c()) +
                                       " channels, expected " +
                                       std::to_string(in_channels()));
    }
    detail::ConvGeom g;
    g.in_c = in_channels();
    g.out_c = out_channels();
    g.k = ksize();
    g.stride = stride;
    g.pad = padding >= 0 ? padding : (g.k - 1) / 2;
    g.groups = groups;
    g.ih = x.h();
    g.iw = x.w();
    g.oh = (g.ih + 2 * g.pad - g.k) / g.stride + 1;
    g.ow = (g.iw + 2 * g.pad - g.k) / g.stride + 1;
    if (g.oh <= 0 || g.ow <= 0) {
      throw ShapeError("height", "conv: output would be empty");
    }
    return g;
  }
};

template <typename T>
Var<T> conv2d(const Var<T>& x, ConvParams<T>& p) {
  const Tensor<T>& xt = x.tensor();
  const detail::ConvGeom g = p.geom(xt);
  const std::size_t opix = g.opix();
  Tensor<T> out(xt.n(), g.out_c, g.oh, g.ow);
  const T* wp = p.kernel.tensor().data();
  const bool pointwise = (g.k == 1 && g.stride == 1 && g.pad == 0 && g.groups == 1);
  const bool depthwise = (g.groups == g.in_c && g.groups == g.out_c && !pointwise);

  if (pointwise) {
    for (int b = 0; b < xt.n(); ++b) {
      detail::gemm_nn(wp, xt.sample(b), out.sample(b), g.out_c, g.in_c,
                      static_cast<int>(opix), false);
    }
  } else if (depthwise) {
    flop_counter() += 2ull * xt.n() * g.in_c * g.kk() * opix;
    const std::size_t plane = xt.plane();
    for (int b = 0; b < xt.n(); ++b) {
      for (int c = 0; c < g.in_c; ++c) {
        const T* xc = xt.sample(b) + c * plane;
        const T* wk = wp + static_cast<std::size_t>(c) * g.kk();
        T* oc = out.sample(b) + c * opix;
        for (int oy = 0; oy < g.oh; ++oy) {
          for (int ox = 0; ox < g.ow; ++ox) {
            T acc = T(0);
            for (int ky = 0; ky < g.k; ++ky) {
              const int y = oy * g.stride - g.pad + ky;
              if (y < 0 || y >= g.ih) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                const int x0 = ox * g.stride - g.pad + kx;
                if (x0 >= 0 && x0 < g.iw) acc += wk[ky * g.k + kx] * xc[y * g.iw + x0];
              }
            }
            oc[oy * g.ow + ox] = acc;
          }
        }
      }
    }
  } else {
    std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * opix);
    for (int b = 0; b < xt.n(); ++b) {
      detail::im2col(xt.sample(b), g, col.data());
      for (int grp = 0; grp < g.groups; ++grp) {
        detail::gemm_nn(wp + static_cast<std::size_t>(grp) * g.group_out() * g.group_rows(),
                        col.data() + static_cast<std::size_t>(grp) * g.group_rows() * opix,
                        out.sample(b) + static_cast<std::size_t>(grp) * g.group_out() * opix,
                        g.group_out(), g.group_rows(), static_cast<int>(opix), false);
      }
    }
  }

  // Bias.
  const T* bp = p.bias.tensor().data();
  for (int b = 0; b < xt.n(); ++b) {
    for (int c = 0; c < g.out_c; ++c) {
      T* oc = out.sample(b) + c * opix;
      for (std::size_t i = 0; i < opix; ++i) oc[i] += bp[c];
    }
  }

  return make_var<T>(
      std::move(out), {x, p.kernel, p.bias},
      [g, pointwise, depthwise](VarNode<T>& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        const std::size_t opix = g.opix();
        const auto& go = n.value;
        const T* wp = pw.value.data();

        if (pb.requires_grad) {
          T* db = pb.value.grad().data();
          for (int b = 0; b < go.n(); ++b) {
            for (int c = 0; c < g.out_c; ++c) {
              const T* gp = go.grad().data() + go.index(b, c, 0, 0);
              T s = T(0);
              for (std::size_t i = 0; i < opix; ++i) s += gp[i];
              db[c] += s;
            }
          }
        }

        if (pointwise) {
          for (int b = 0; b < go.n(); ++b) {
            const T* gp = go.grad().data() + go.sample_stride() * b;
            if (pw.requires_grad) {
              detail::gemm_nt(gp, px.value.sample(b), pw.value.grad().data(), g.out_c,
                              static_cast<int>(opix), g.in_c, true);
            }
            if (px.requires_grad) {
              detail::gemm_tn(wp, gp, px.value.grad().data() + px.value.sample_stride() * b,
                              g.in_c, g.out_c, static_cast<int>(opix), true);
            }
          }
          return;
        }

        if (depthwise) {
          const std::size_t plane = static_cast<std::size_t>(g.ih) * g.iw;
          for (int b = 0; b < go.n(); ++b) {
            for (int c = 0; c < g.in_c; ++c) {
              const T* gp = go.grad().data() + go.index(b, c, 0, 0);
              const T* xc = px.value.sample(b) + c * plane;
              const T* wk = wp + static_cast<std::size_t>(c) * g.kk();
              T* dwk = pw.requires_grad
                           ? pw.value.grad().data() + static_cast<std::size_t>(c) * g.kk()
                           : nullptr;
              T* dxc = px.requires_grad
                           ? px.value.grad().data() + px.value.index(b, c, 0, 0)
                           : nullptr;
              for (int oy = 0; oy < g.oh; ++oy) {
                for (int ox = 0; ox < g.ow; ++ox) {
                  const T gv = gp[oy * g.ow + ox];
                  for (int ky = 0; ky < g.k; ++ky) {
                    const int y = oy * g.stride - g.pad + ky;
                    if (y < 0 || y >= g.ih) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                      const int x0 = ox * g.stride - g.pad + kx;
                      if (x0 < 0 || x0 >= g.iw) continue;
                      if (dwk) dwk[ky * g.k + kx] += gv * xc[y * g.iw + x0];
                      if (dxc) dxc[y * g.iw + x0] += gv * wk[ky * g.k + kx];
                    }
                  }
                }
              }
            }
          }
          return;
        }

        std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * opix);
        std::vector<T> dcol(px.requires_grad ? col.size() : 0);
        for (int b = 0; b < go.n(); ++b) {
          const T* gp = go.grad().data() + go.sample_stride() * b;
          detail::im2col(px.value.sample(b), g, col.data());
          for (int grp = 0; grp < g.groups; ++grp) {
            const std::size_t wof = static_cast<std::size_t>(grp) * g.group_out() * g.group_rows();
            const std::size_t cof = static_cast<std::size_t>(grp) * g.group_rows() * opix;
            const std::size_t gof = static_cast<std::size_t>(grp) * g.group_out() * opix;
            if (pw.requires_grad) {
              detail::gemm_nt(gp + gof, col.data() + cof, pw.value.grad().data() + wof,
                              g.group_out(), static_cast<int>(opix), g.group_rows(), true);
            }
            if (px.requires_grad) {
              detail::gemm_tn(wp + wof, gp + gof, dcol.data() + cof, g.group_rows(),
                              g.group_out(), static_cast<int>(opix), false);
            }
          }
          if (px.requires_grad) {
            detail::col2im_add(dcol.data(), g,
                               px.value.grad().data() + px.value.sample_stride() * b);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Depthwise-separable convolution: k x k depthwise followed by 1x1 pointwise.
// ---------------------------------------------------------------------------

template <typename T>
struct SeparableConvParams {
  ConvParams<T> depthwise;
  ConvParams<T> pointwise;

  static SeparableConvParams make(int in_c, int out_c, int k, int stride = 1,
                                  Rng* rng = nullptr) {
    SeparableConvParams p;
    p.depthwise = ConvParams<T>::make(in_c, in_c, k, stride, -1, in_c, rng);
    p.pointwise = ConvParams<T>::make(in_c, out_c, 1, 1, 0, 1, rng);
    return p;
  }
};

template <typename T>
Var<T> depthwise_separable_conv(const Var<T>& x, SeparableConvParams<T>& p) {
  Var<T> mid = conv2d(x, p.depthwise);
  return conv2d(mid, p.pointwise);
}

// ---------------------------------------------------------------------------
// Deformable convolution (single deformable group)
// ---------------------------------------------------------------------------
//
// `offsets` has shape (N, 2*k*k, OH, OW): channel 2*t is the vertical and
// 2*t+1 the horizontal displacement of kernel tap t = ky*k + kx.  Samples are
// gathered bilinearly; positions at or beyond one pixel outside the border
// contribute zero.  With an all-zero offset field the op reduces exactly to
// conv2d (taps land on integers, so one bilinear corner has weight 1).

namespace detail {

template <typename T>
T bilinear_sample(const T* im, int height, int width, T y, T x) {
  if (y <= T(-1) || y >= static_cast<T>(height) || x <= T(-1) || x >= static_cast<T>(width)) {
    return T(0);
  }
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const T ly = y - y0, lx = x - x0;
  const T hy = T(1) - ly, hx = T(1) - lx;
  T v = T(0);
  if (y0 >= 0 && x0 >= 0) v += hy * hx * im[y0 * width + x0];
  if (y0 >= 0 && x1 <= width - 1) v += hy * lx * im[y0 * width + x1];
  if (y1 <= height - 1 && x0 >= 0) v += ly * hx * im[y1 * width + x0];
  if (y1 <= height - 1 && x1 <= width - 1) v += ly * lx * im[y1 * width + x1];
  return v;
}

// Accumulate g into the four corners around (y, x).
template <typename T>
void bilinear_scatter(T* im, int height, int width, T y, T x, T g) {
  if (y <= T(-1) || y >= static_cast<T>(height) || x <= T(-1) || x >= static_cast<T>(width)) {
    return;
  }
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const T ly = y - y0, lx = x - x0;
  const T hy = T(1) - ly, hx = T(1) - lx;
  if (y0 >= 0 && x0 >= 0) im[y0 * width + x0] += hy * hx * g;
  if (y0 >= 0 && x1 <= width - 1) im[y0 * width + x1] += hy * lx * g;
  if (y1 <= height - 1 && x0 >= 0) im[y1 * width + x0] += ly * hx * g;
  if (y1 <= height - 1 && x1 <= width - 1) im[y1 * width + x1] += ly * lx * g;
}

// d(bilinear_sample)/dy (dir == 0) or /dx (dir == 1) at (y, x).
template <typename T>
T bilinear_coord_weight(const T* im, int height, int width, T y, T x, int dir) {
  if (y <= T(-1) || y >= static_cast<T>(height) || x <= T(-1) || x >= static_cast<T>(width)) {
    return T(0);
  }
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const T ly = y - y0, lx = x - x0;
  const T hy = T(1) - ly, hx = T(1) - lx;
  T w = T(0);
  if (dir == 0) {
    if (y0 >= 0 && x0 >= 0) w -= hx * im[y0 * width + x0];
    if (y0 >= 0 && x1 <= width - 1) w -= lx * im[y0 * width + x1];
    if (y1 <= height - 1 && x0 >= 0) w += hx * im[y1 * width + x0];
    if (y1 <= height - 1 && x1 <= width - 1) w += lx * im[y1 * width + x1];
  } else {
    if (y0 >= 0 && x0 >= 0) w -= hy * im[y0 * width + x0];
    if (y0 >= 0 && x1 <= width - 1) w += hy * im[y0 * width + x1];
    if (y1 <= height - 1 && x0 >= 0) w -= ly * im[y1 * width + x0];
    if (y1 <= height - 1 && x1 <= width - 1) w += ly * im[y1 * width + x1];
  }
  return w;
}

// Deformed analogue of im2col: row (c, ky, kx), column (oy, ox) holds the
// bilinear sample at the offset tap position.
template <typename T>
void deform_im2col(const T* x, const T* off, const ConvGeom& g, T* col) {
  const std::size_t plane = static_cast<std::size_t>(g.ih) * g.iw;
  const std::size_t opix = g.opix();
  for (int c = 0; c < g.in_c; ++c) {
    const T* xc = x + c * plane;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const int t = ky * g.k + kx;
        const T* oy_off = off + static_cast<std::size_t>(2 * t) * opix;
        const T* ox_off = off + static_cast<std::size_t>(2 * t + 1) * opix;
        T* row = col + static_cast<std::size_t>(c * g.kk() + t) * opix;
        std::size_t i = 0;
        for (int oy = 0; oy < g.oh; ++oy) {
          for (int ox = 0; ox < g.ow; ++ox, ++i) {
            const T y = static_cast<T>(oy * g.stride - g.pad + ky) + oy_off[i];
            const T xpos = static_cast<T>(ox * g.stride - g.pad + kx) + ox_off[i];
            row[i] = bilinear_sample(xc, g.ih, g.iw, y, xpos);
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> deformable_conv2d(const Var<T>& x, ConvParams<T>& p, const Var<T>& offsets) {
  const Tensor<T>& xt = x.tensor();
  if (p.groups != 1) {
    throw ConfigError("deformable_conv2d: grouped kernels not supported");
  }
  const detail::ConvGeom g = p.geom(xt);
  const std::size_t opix = g.opix();
  const Tensor<T>& ot = offsets.tensor();
  if (ot.n() != xt.n() || ot.c() != 2 * g.kk() || ot.h() != g.oh || ot.w() != g.ow) {
    throw ShapeError("channels", "deformable_conv2d: offset field shape mismatch");
  }

  Tensor<T> out(xt.n(), g.out_c, g.oh, g.ow);
  std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * opix);
  const T* wp = p.kernel.tensor().data();
  flop_counter() += 6ull * xt.n() * g.col_rows() * opix;  // bilinear gathers
  for (int b = 0; b < xt.n(); ++b) {
    detail::deform_im2col(xt.sample(b), ot.sample(b), g, col.data());
    detail::gemm_nn(wp, col.data(), out.sample(b), g.out_c, g.col_rows(),
                    static_cast<int>(opix), false);
  }
  const T* bp = p.bias.tensor().data();
  for (int b = 0; b < xt.n(); ++b) {
    for (int c = 0; c < g.out_c; ++c) {
      T* oc = out.sample(b) + c * opix;
      for (std::size_t i = 0; i < opix; ++i) oc[i] += bp[c];
    }
  }

  return make_var<T>(
      std::move(out), {x, p.kernel, p.bias, offsets}, [g](VarNode<T>& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        auto& po = *n.parents[3];
        const std::size_t opix = g.opix();
        const std::size_t plane = static_cast<std::size_t>(g.ih) * g.iw;
        const auto& go = n.value;
        const T* wp = pw.value.data();

        if (pb.requires_grad) {
          T* db = pb.value.grad().data();
          for (int b = 0; b < go.n(); ++b) {
            for (int c = 0; c < g.out_c; ++c) {
              const T* gp = go.grad().data() + go.index(b, c, 0, 0);
              T s = T(0);
              for (std::size_t i = 0; i < opix; ++i) s += gp[i];
              db[c] += s;
            }
          }
        }

        std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * opix);
        std::vector<T> dcol(col.size());
        for (int b = 0; b < go.n(); ++b) {
          const T* gp = go.grad().data() + go.sample_stride() * b;
          const T* xb = px.value.sample(b);
          const T* ob = po.value.sample(b);
          if (pw.requires_grad) {
            detail::deform_im2col(xb, ob, g, col.data());
            detail::gemm_nt(gp, col.data(), pw.value.grad().data(), g.out_c,
                            static_cast<int>(opix), g.col_rows(), true);
          }
          if (!px.requires_grad && !po.requires_grad) continue;
          detail::gemm_tn(wp, gp, dcol.data(), g.col_rows(), g.out_c,
                          static_cast<int>(opix), false);

          T* dxb = px.requires_grad
                       ? px.value.grad().data() + px.value.sample_stride() * b
                       : nullptr;
          T* dob = po.requires_grad
                       ? po.value.grad().data() + po.value.sample_stride() * b
                       : nullptr;
          for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
              const int t = ky * g.k + kx;
              const T* oy_off = ob + static_cast<std::size_t>(2 * t) * opix;
              const T* ox_off = ob + static_cast<std::size_t>(2 * t + 1) * opix;
              T* doy = dob ? dob + static_cast<std::size_t>(2 * t) * opix : nullptr;
              T* dox = dob ? dob + static_cast<std::size_t>(2 * t + 1) * opix : nullptr;
              std::size_t i = 0;
              for (int oy = 0; oy < g.oh; ++oy) {
                for (int ox = 0; ox < g.ow; ++ox, ++i) {
                  const T y = static_cast<T>(oy * g.stride - g.pad + ky) + oy_off[i];
                  const T xpos = static_cast<T>(ox * g.stride - g.pad + kx) + ox_off[i];
                  T wy = T(0), wx = T(0);
                  for (int c = 0; c < g.in_c; ++c) {
                    const T gcol = dcol[static_cast<std::size_t>(c * g.kk() + t) * opix + i];
                    const T* xc = xb + c * plane;
                    if (dxb) {
                      detail::bilinear_scatter(dxb + c * plane, g.ih, g.iw, y, xpos, gcol);
                    }
                    if (dob) {
                      wy += gcol * detail::bilinear_coord_weight(xc, g.ih, g.iw, y, xpos, 0);
                      wx += gcol * detail::bilinear_coord_weight(xc, g.ih, g.iw, y, xpos, 1);
                    }
                  }
                  if (dob) {
                    doy[i] += wy;
                    dox[i] += wx;
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace dunet
