#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "simseg/autograd.hpp"
#include "simseg/rng.hpp"
#include "simseg/volume.hpp"

namespace simseg::testing {

inline Tensor random_tensor(Shape4 shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline BinaryMask random_mask(int h, int w, double p, Rng& rng) {
  BinaryMask m(1, h, w);
  for (auto& v : m.values()) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Largest relative error between the analytic gradient of the scalar loss()
// with respect to every element of `wrt` and its central difference.
inline double gradient_check(const std::function<ag::Var()>& loss,
                             std::vector<ag::Var> wrt, double h = 1e-5) {
  for (auto& v : wrt) v.zero_grad();
  ag::backward(loss());
  double worst = 0.0;
  for (auto& v : wrt) {
    const Tensor analytic = v.grad();
    Tensor& x = v.mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = x[i];
      x[i] = x0 + h;
      const double up = loss().value()[0];
      x[i] = x0 - h;
      const double down = loss().value()[0];
      x[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, relative_error(a, numeric));
    }
  }
  return worst;
}

}  // namespace simseg::testing
