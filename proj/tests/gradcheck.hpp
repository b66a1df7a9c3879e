#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "simic/rng.hpp"
#include "simic/tensor.hpp"

namespace simic::testing {

// Relative error with an absolute floor. The floor must sit above the
// central-difference roundoff scale (~|loss|*eps/h ~ 1e-11): a coordinate
// whose true derivative is exactly zero (e.g. clamped Huber branches that
// cancel) still yields ~1e-10 of FD noise, which a tighter floor would
// misreport as a large relative error.
inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-3});
}

// Central finite-difference oracle: perturbs up to `coords` coordinates of
// each parameter by +/-h, re-evaluates the scalar loss with the tape off, and
// compares the slope against the reverse-mode gradient. Returns the worst
// relative error over all checked coordinates.
inline double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         double h = 1e-5, int coords = 20, std::uint64_t seed = 7) {
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) analytic.push_back(p.grad_vec());

  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::size_t n = p.numel();
    std::vector<std::size_t> idx;
    if (n <= static_cast<std::size_t>(coords)) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int i = 0; i < coords; ++i) idx.push_back(rng.below(n));
    }
    for (std::size_t i : idx) {
      const double saved = p.data()[i];
      double lp = 0.0, lm = 0.0;
      {
        NoGradGuard ng;
        p.data()[i] = saved + h;
        lp = loss_fn().value();
        p.data()[i] = saved - h;
        lm = loss_fn().value();
        p.data()[i] = saved;
      }
      const double fd = (lp - lm) / (2.0 * h);
      worst = std::max(worst, rel_err(fd, analytic[pi][i]));
    }
  }
  return worst;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                            double sigma = 1.0) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, sigma);
  return t;
}

}  // namespace simic::testing
