#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dunet/autograd.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline T sigmoid_scalar(T z) {
  // Evaluate from the non-overflowing side.
  if (z >= T(0)) {
    const T e = std::exp(-z);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError("channels", std::string(op) + ": operand shapes differ");
  }
}

}  // namespace detail

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.tensor();
  for (auto& v : out.vec()) v = std::max(v, T(0));
  return make_var<T>(std::move(out), {x}, [](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    const auto& xv = p.value.vec();
    auto& pg = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) pg[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.tensor();
  for (auto& v : out.vec()) v = detail::sigmoid_scalar(v);
  return make_var<T>(std::move(out), {x}, [](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    const auto& yv = n.value.vec();
    auto& pg = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      pg[i] += g[i] * yv[i] * (T(1) - yv[i]);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.tensor(), b.tensor(), "add");
  Tensor<T> out = a.tensor();
  const auto& bv = b.tensor().vec();
  for (std::size_t i = 0; i < bv.size(); ++i) out.vec()[i] += bv[i];
  return make_var<T>(std::move(out), {a, b}, [](VarNode<T>& n) {
    const auto& g = n.value.grad();
    for (int k = 0; k < 2; ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      auto& pg = p.value.grad();
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double k) {
  Tensor<T> out = x.tensor();
  for (auto& v : out.vec()) v = static_cast<T>(v * k);
  return make_var<T>(std::move(out), {x}, [k](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    auto& pg = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += static_cast<T>(g[i] * k);
  });
}

// Concatenate along the channel axis; all inputs share N, H, W.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ConfigError("concat_channels: no inputs");
  const Tensor<T>& first = xs[0].tensor();
  int total_c = 0;
  for (const auto& x : xs) {
    const Tensor<T>& t = x.tensor();
    if (t.n() != first.n() || t.h() != first.h() || t.w() != first.w()) {
      throw ShapeError("channels", "concat_channels: spatial/batch shapes differ");
    }
    total_c += t.c();
  }
  Tensor<T> out(first.n(), total_c, first.h(), first.w());
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n(); ++n) {
    T* dst = out.sample(n);
    for (const auto& x : xs) {
      const Tensor<T>& t = x.tensor();
      const std::size_t bytes = t.c() * plane;
      std::copy_n(t.sample(n), bytes, dst);
      dst += bytes;
    }
  }
  std::vector<int> chans;
  chans.reserve(xs.size());
  for (const auto& x : xs) chans.push_back(x.tensor().c());
  return make_var<T>(std::move(out), xs, [chans, plane](VarNode<T>& n) {
    const auto& g = n.value.grad();
    const int batch = n.value.n();
    for (int b = 0; b < batch; ++b) {
      std::size_t src = n.value.sample_stride() * b;
      for (std::size_t k = 0; k < chans.size(); ++k) {
        auto& p = *n.parents[k];
        const std::size_t len = chans[k] * plane;
        if (p.requires_grad) {
          auto& pg = p.value.grad();
          std::size_t dst = p.value.sample_stride() * b;
          for (std::size_t i = 0; i < len; ++i) pg[dst + i] += g[src + i];
        }
        src += len;
      }
    }
  });
}

// Channels [c0, c1) of x.
template <typename T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
  const Tensor<T>& t = x.tensor();
  if (c0 < 0 || c1 <= c0 || c1 > t.c()) {
    throw ShapeError("channels", "slice_channels: range out of bounds");
  }
  Tensor<T> out(t.n(), c1 - c0, t.h(), t.w());
  const std::size_t plane = t.plane();
  for (int n = 0; n < t.n(); ++n) {
    std::copy_n(t.sample(n) + c0 * plane, (c1 - c0) * plane, out.sample(n));
  }
  return make_var<T>(std::move(out), {x}, [c0, plane](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    auto& pg = p.value.grad();
    const std::size_t len = n.value.sample_stride();
    for (int b = 0; b < n.value.n(); ++b) {
      const std::size_t src = len * b;
      const std::size_t dst = p.value.sample_stride() * b + c0 * plane;
      for (std::size_t i = 0; i < len; ++i) pg[dst + i] += g[src + i];
    }
  });
}

// Tile the channel axis `factor` times: output channel k reads input channel
// k % C.  The pull-back accumulates every replica's gradient.
template <typename T>
Var<T> replicate_channels(const Var<T>& x, int factor) {
  if (factor < 1) throw ConfigError("replicate_channels: factor must be >= 1");
  const Tensor<T>& t = x.tensor();
  Tensor<T> out(t.n(), t.c() * factor, t.h(), t.w());
  const std::size_t slab = t.sample_stride();
  for (int n = 0; n < t.n(); ++n) {
    for (int r = 0; r < factor; ++r) {
      std::copy_n(t.sample(n), slab, out.sample(n) + r * slab);
    }
  }
  return make_var<T>(std::move(out), {x}, [factor, slab](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    auto& pg = p.value.grad();
    for (int b = 0; b < n.value.n(); ++b) {
      const std::size_t src0 = n.value.sample_stride() * b;
      const std::size_t dst0 = slab * b;
      for (int r = 0; r < factor; ++r) {
        const std::size_t src = src0 + r * slab;
        for (std::size_t i = 0; i < slab; ++i) pg[dst0 + i] += g[src + i];
      }
    }
  });
}

// 2x2 max pooling, stride 2.  Ties resolve to the first maximum in row-major
// window order, and the pull-back routes gradient only to that element.
template <typename T>
Var<T> max_pool2d(const Var<T>& x) {
  const Tensor<T>& t = x.tensor();
  if (t.h() % 2 != 0 || t.w() % 2 != 0) {
    throw ShapeError("height", "max_pool2d: spatial dims must be even");
  }
  const int oh = t.h() / 2, ow = t.w() / 2;
  Tensor<T> out(t.n(), t.c(), oh, ow);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  std::size_t oi = 0;
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo, ++oi) {
          std::size_t best = t.index(n, c, 2 * y, 2 * xo);
          T bv = t.data()[best];
          const std::size_t cand[3] = {t.index(n, c, 2 * y, 2 * xo + 1),
                                       t.index(n, c, 2 * y + 1, 2 * xo),
                                       t.index(n, c, 2 * y + 1, 2 * xo + 1)};
          for (std::size_t idx : cand) {
            if (t.data()[idx] > bv) {
              bv = t.data()[idx];
              best = idx;
            }
          }
          out.vec()[oi] = bv;
          (*argmax)[oi] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return make_var<T>(std::move(out), {x}, [argmax](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    auto& pg = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) pg[(*argmax)[i]] += g[i];
  });
}

// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const Tensor<T>& t = x.tensor();
  Tensor<T> out(t.n(), t.c(), t.h() * 2, t.w() * 2);
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < out.h(); ++y) {
        const T* src = &t.at(n, c, y / 2, 0);
        T* dst = &out.at(n, c, y, 0);
        for (int xo = 0; xo < out.w(); ++xo) dst[xo] = src[xo / 2];
      }
    }
  }
  return make_var<T>(std::move(out), {x}, [](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const auto& g = n.value.grad();
    auto& pg = p.value.grad();
    const Tensor<T>& o = n.value;
    std::size_t oi = 0;
    for (int b = 0; b < o.n(); ++b) {
      for (int c = 0; c < o.c(); ++c) {
        for (int y = 0; y < o.h(); ++y) {
          const std::size_t row = p.value.index(b, c, y / 2, 0);
          for (int xo = 0; xo < o.w(); ++xo, ++oi) pg[row + xo / 2] += g[oi];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------
//
// Per-channel statistics over (N,H,W) with the biased variance estimate.
// Training mode normalises by batch statistics and updates the running
// buffers with momentum; eval mode normalises by the running buffers.  Both
// modes are differentiable (training mode back-propagates through the batch
// statistics).

template <typename T>
struct BatchNorm {
  Var<T> gamma;  // (1,C,1,1), init 1
  Var<T> beta;   // (1,C,1,1), init 0
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNorm make(int channels) {
    BatchNorm bn;
    bn.gamma = Var<T>(Tensor<T>::full(1, channels, 1, 1, T(1)), true);
    bn.beta = Var<T>(Tensor<T>(1, channels, 1, 1), true);
    bn.running_mean = Tensor<T>(1, channels, 1, 1);
    bn.running_var = Tensor<T>::full(1, channels, 1, 1, T(1));
    return bn;
  }
};

template <typename T>
Var<T> batch_norm(const Var<T>& x, BatchNorm<T>& bn, bool training) {
  const Tensor<T>& t = x.tensor();
  const int C = t.c();
  if (bn.gamma.tensor().c() != C) {
    throw ShapeError("channels", "batch_norm: parameter/input channel mismatch");
  }
  const std::size_t plane = t.plane();
  const std::size_t m = static_cast<std::size_t>(t.n()) * plane;  // reduction size

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < t.n(); ++n) {
        const T* p = &t.at(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double sv = 0.0;
      for (int n = 0; n < t.n(); ++n) {
        const T* p = &t.at(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sv += d * d;
        }
      }
      const double var = sv / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(bn.eps)));
      bn.running_mean.vec()[c] =
          static_cast<T>((1.0 - bn.momentum) * bn.running_mean.vec()[c] + bn.momentum * mu);
      bn.running_var.vec()[c] =
          static_cast<T>((1.0 - bn.momentum) * bn.running_var.vec()[c] + bn.momentum * var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = bn.running_mean.vec()[c];
      inv_std[c] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(bn.running_var.vec()[c]) +
                                         static_cast<double>(bn.eps)));
    }
  }

  Tensor<T> out(t.n(), C, t.h(), t.w());
  // x_hat is needed by the pull-back for both dgamma and the batch-stat terms.
  auto x_hat = std::make_shared<std::vector<T>>(t.numel());
  const auto& gv = bn.gamma.tensor().vec();
  const auto& bv = bn.beta.tensor().vec();
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < C; ++c) {
      const T* src = &t.at(n, c, 0, 0);
      T* dst = &out.at(n, c, 0, 0);
      T* xh = x_hat->data() + out.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mean[c]) * inv_std[c];
        dst[i] = gv[c] * xh[i] + bv[c];
      }
    }
  }

  auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
  return make_var<T>(
      std::move(out), {x, bn.gamma, bn.beta},
      [x_hat, istd, training, plane, m](VarNode<T>& n) {
        auto& px = *n.parents[0];
        auto& pgamma = *n.parents[1];
        auto& pbeta = *n.parents[2];
        const auto& g = n.value.grad();
        const int C = n.value.c();
        const int batch = n.value.n();
        const auto& gammav = pgamma.value.vec();
        for (int c = 0; c < C; ++c) {
          // Channel-wise reductions of dy and dy*x_hat.
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (int b = 0; b < batch; ++b) {
            const std::size_t base = n.value.index(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += g[base + i];
              sum_dy_xh += g[base + i] * (*x_hat)[base + i];
            }
          }
          if (pbeta.requires_grad) pbeta.value.grad()[c] += static_cast<T>(sum_dy);
          if (pgamma.requires_grad) pgamma.value.grad()[c] += static_cast<T>(sum_dy_xh);
          if (!px.requires_grad) continue;
          auto& pg = px.value.grad();
          const T k = gammav[c] * (*istd)[c];
          if (training) {
            const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
            const T mean_dy_xh = static_cast<T>(sum_dy_xh / static_cast<double>(m));
            for (int b = 0; b < batch; ++b) {
              const std::size_t base = n.value.index(b, c, 0, 0);
              for (std::size_t i = 0; i < plane; ++i) {
                pg[base + i] +=
                    k * (g[base + i] - mean_dy - (*x_hat)[base + i] * mean_dy_xh);
              }
            }
          } else {
            for (int b = 0; b < batch; ++b) {
              const std::size_t base = n.value.index(b, c, 0, 0);
              for (std::size_t i = 0; i < plane; ++i) pg[base + i] += k * g[base + i];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Scalar reductions used by the losses
// ---------------------------------------------------------------------------

// sum((a - b)^2) over all elements, as a scalar node.
template <typename T>
Var<T> sum_sq_diff(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.tensor(), b.tensor(), "sum_sq_diff");
  const auto& av = a.tensor().vec();
  const auto& bv = b.tensor().vec();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    s += d * d;
  }
  return make_var<T>(Tensor<T>::scalar(static_cast<T>(s)), {a, b}, [](VarNode<T>& n) {
    const T go = n.value.grad()[0];
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto& av = pa.value.vec();
    const auto& bv = pb.value.vec();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = T(2) * go * (av[i] - bv[i]);
      if (pa.requires_grad) pa.value.grad()[i] += d;
      if (pb.requires_grad) pb.value.grad()[i] -= d;
    }
  });
}

// sum of elementwise binary cross-entropy between sigmoid(logits) and a fixed
// target in [0,1], computed in the numerically stable softplus form:
//   ce(z, t) = max(z, 0) - t*z + log(1 + exp(-|z|)),  d/dz = sigmoid(z) - t.
template <typename T>
Var<T> sigmoid_ce_sum(const Var<T>& logits, const Var<T>& target) {
  detail::require_same_shape(logits.tensor(), target.tensor(), "sigmoid_ce_sum");
  const auto& zv = logits.tensor().vec();
  const auto& tv = target.tensor().vec();
  double s = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv[i], t = tv[i];
    s += std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
  }
  return make_var<T>(
      Tensor<T>::scalar(static_cast<T>(s)), {logits, target}, [](VarNode<T>& n) {
        auto& pz = *n.parents[0];
        auto& pt = *n.parents[1];
        const T go = n.value.grad()[0];
        const auto& zv = pz.value.vec();
        const auto& tv = pt.value.vec();
        for (std::size_t i = 0; i < zv.size(); ++i) {
          const T sz = detail::sigmoid_scalar(zv[i]);
          if (pz.requires_grad) pz.value.grad()[i] += go * (sz - tv[i]);
          // d ce / d t = -z
          if (pt.requires_grad) pt.value.grad()[i] += go * (-zv[i]);
        }
      });
}

// Plain sum of all elements (test/diagnostic helper).
template <typename T>
Var<T> sum_all(const Var<T>& x) {
  double s = 0.0;
  for (const T& v : x.tensor().vec()) s += v;
  return make_var<T>(Tensor<T>::scalar(static_cast<T>(s)), {x}, [](VarNode<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const T go = n.value.grad()[0];
    auto& pg = p.value.grad();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += go;
  });
}

}  // namespace dunet
