#include "simseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "simseg/errors.hpp"
#include "simseg/ops.hpp"

namespace simseg {
namespace {

void check(const Tensor& p, const Tensor& y) {
  require_same_shape(p.shape(), y.shape(), "loss");
  if (p.c() != 1)
    throw InputError("loss expects single-channel maps, got " +
                     p.shape().str());
}

struct DiceTerms {
  std::vector<double> inter, sum_p, sum_y;
};

DiceTerms dice_terms(const Tensor& p, const Tensor& y) {
  const int b = p.n();
  DiceTerms t{std::vector<double>(b), std::vector<double>(b),
              std::vector<double>(b)};
  const std::size_t plane = p.shape().plane();
  for (int n = 0; n < b; ++n) {
    const double* pp = p.plane(n, 0);
    const double* yy = y.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      t.inter[n] += pp[i] * yy[i];
      t.sum_p[n] += pp[i];
      t.sum_y[n] += yy[i];
    }
  }
  return t;
}

double dice_from_terms(const DiceTerms& t) {
  double total = 0.0;
  for (std::size_t n = 0; n < t.inter.size(); ++n)
    total += 1.0 - (2.0 * t.inter[n] + kDiceSmooth) /
                       (t.sum_p[n] + t.sum_y[n] + kDiceSmooth);
  return total / static_cast<double>(t.inter.size());
}

}  // namespace

double dice_loss(const Tensor& p, const Tensor& y) {
  check(p, y);
  return dice_from_terms(dice_terms(p, y));
}

double bce_loss(const Tensor& p, const Tensor& y) {
  check(p, y);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kBceClip, 1.0 - kBceClip);
    total -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return total / static_cast<double>(p.size());
}

double composite_loss(const Tensor& p, const Tensor& y) {
  return dice_loss(p, y) + bce_loss(p, y);
}

ag::Var dice_loss(const ag::Var& p, const Tensor& y) {
  check(p.value(), y);
  DiceTerms t = dice_terms(p.value(), y);
  Tensor out({1, 1, 1, 1}, dice_from_terms(t));
  return ag::make_result(std::move(out), {p}, [t, y](ag::Node& self) {
    auto& parent = self.parents[0];
    Tensor& g = parent->grad_buffer();
    const double d = self.grad[0] / static_cast<double>(t.inter.size());
    const std::size_t plane = g.shape().plane();
    for (int n = 0; n < g.n(); ++n) {
      const double num = 2.0 * t.inter[n] + kDiceSmooth;
      const double den = t.sum_p[n] + t.sum_y[n] + kDiceSmooth;
      const double* yy = y.plane(n, 0);
      double* gg = g.plane(n, 0);
      // d/dp_i [1 - num/den] = -(2 y_i den - num) / den^2
      for (std::size_t i = 0; i < plane; ++i)
        gg[i] -= d * (2.0 * yy[i] * den - num) / (den * den);
    }
  });
}

ag::Var bce_loss(const ag::Var& p, const Tensor& y) {
  Tensor out({1, 1, 1, 1}, bce_loss(p.value(), y));
  return ag::make_result(std::move(out), {p}, [y](ag::Node& self) {
    const Tensor& pv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    const double d = self.grad[0] / static_cast<double>(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double q = pv[i];
      if (q < kBceClip || q > 1.0 - kBceClip) continue;  // clipped: flat
      g[i] += d * (-y[i] / q + (1.0 - y[i]) / (1.0 - q));
    }
  });
}

ag::Var composite_loss(const ag::Var& p, const Tensor& y) {
  return ag::add(dice_loss(p, y), bce_loss(p, y));
}

}  // namespace simseg
