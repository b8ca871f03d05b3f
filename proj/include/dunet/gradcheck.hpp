#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dunet/autograd.hpp"
#include "dunet/random.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Finite-difference gradient verification (double precision only)
// ---------------------------------------------------------------------------
//
// `forward` must rebuild the graph from the current parameter values and
// return the scalar loss; the checkers perturb parameters in place, re-run
// it, and compare central differences against the analytic gradients.

inline double rel_err(double a, double b) {
  const double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }
  bool ok(double tol) const { return max_rel_err() < tol; }
};

using ParamList = std::vector<std::pair<std::string, Var<double>>>;

namespace detail {

inline std::vector<std::vector<double>> analytic_grads(
    const std::function<Var<double>()>& forward, const ParamList& params) {
  for (const auto& [name, p] : params) {
    const_cast<Var<double>&>(p).zero_grad();
  }
  Var<double> loss = forward();
  loss.backward();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& [name, p] : params) {
    grads.push_back(p.tensor().grad());
    if (grads.back().empty()) grads.back().assign(p.tensor().numel(), 0.0);
  }
  return grads;
}

}  // namespace detail

// Exhaustive check: central difference on every parameter element.
inline GradCheckReport grad_check(const std::function<Var<double>()>& forward,
                                  const ParamList& params, double h = 1e-5) {
  GradCheckReport report;
  const auto grads = detail::analytic_grads(forward, params);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var<double>& p = const_cast<Var<double>&>(params[pi].second);
    auto& data = p.tensor().vec();
    GradCheckEntry entry{params[pi].first, 0.0, data.size()};
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = forward().item();
      data[i] = orig - h;
      const double fm = forward().item();
      data[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err(fd, grads[pi][i]));
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// Directional probes: for each parameter tensor, a few random unit directions
// v, comparing (f(p+hv) - f(p-hv)) / 2h against <grad, v>.  Scales to large
// models where the exhaustive check is intractable.
//
// With kink_retries > 0, each probe is cross-validated at step h/2.  A real
// backward bug gives the same central difference at both steps, but a probe
// that straddles a ReLU/argmax kink is step-dependent; such directions are
// redrawn (up to the retry budget) instead of reported as gradient errors.
inline GradCheckReport grad_check_directional(const std::function<Var<double>()>& forward,
                                              const ParamList& params, Rng& rng,
                                              int dirs_per_param = 2, double h = 1e-5,
                                              int kink_retries = 0) {
  GradCheckReport report;
  const auto grads = detail::analytic_grads(forward, params);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var<double>& p = const_cast<Var<double>&>(params[pi].second);
    auto& data = p.tensor().vec();
    GradCheckEntry entry{params[pi].first, 0.0,
                         static_cast<std::size_t>(dirs_per_param)};
    for (int d = 0; d < dirs_per_param; ++d) {
      double fd = 0.0, dot = 0.0;
      for (int attempt = 0; attempt <= kink_retries; ++attempt) {
        std::vector<double> v(data.size());
        double norm = 0.0;
        for (auto& x : v) {
          x = rng.normal();
          norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (auto& x : v) x /= norm;

        dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += grads[pi][i] * v[i];

        const std::vector<double> orig = data;
        auto central = [&](double step) {
          for (std::size_t i = 0; i < v.size(); ++i) data[i] = orig[i] + step * v[i];
          const double fp = forward().item();
          for (std::size_t i = 0; i < v.size(); ++i) data[i] = orig[i] - step * v[i];
          const double fm = forward().item();
          return (fp - fm) / (2.0 * step);
        };
        fd = central(h);
        if (kink_retries > 0) {
          const double fd_half = central(0.5 * h);
          data = orig;
          if (rel_err(fd, fd_half) > 1e-4 && attempt < kink_retries) {
            continue;  // step-dependent slope: the probe crossed a kink
          }
          fd = fd_half;
        } else {
          data = orig;
        }
        break;
      }
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err(fd, dot));
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dunet
