#include <cmath>
#include <numeric>

#include "doctest.h"
#include "simseg/losses.hpp"
#include "simseg/ops.hpp"
#include "test_util.hpp"

using namespace simseg;
using simseg::testing::gradient_check;
using simseg::testing::random_tensor;

namespace {

Tensor random_binary(Shape4 s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return t;
}

double dice_oracle(const Tensor& p, const Tensor& y) {
  double total = 0.0;
  const std::size_t plane = p.size() / p.n();
  for (int b = 0; b < p.n(); ++b) {
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = b * plane; i < (b + 1) * plane; ++i) {
      inter += p[i] * y[i];
      sp += p[i];
      sy += y[i];
    }
    total += 1.0 - (2.0 * inter + 1e-6) / (sp + sy + 1e-6);
  }
  return total / p.n();
}

double bce_oracle(const Tensor& p, const Tensor& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-7, 1.0 - 1e-7);
    s -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("dice loss on a half-filled map") {
  Tensor p({1, 1, 4, 4}, 0.5);
  Tensor y({1, 1, 4, 4}, 0.0);
  for (int i = 0; i < 8; ++i) y[i] = 1.0;
  // 1 - (2 * 4 + eps) / (8 + 8 + eps)
  CHECK(dice_loss(p, y) == doctest::Approx(1.0 - (8.0 + 1e-6) / (16.0 + 1e-6)).epsilon(1e-14));
}

TEST_CASE("dice loss limits") {
  Rng rng(1);
  const Tensor y = random_binary({2, 1, 5, 5}, rng);
  CHECK(dice_loss(y, y) <= 1e-6);
  Tensor inv = y;
  for (double& v : inv.values()) v = 1.0 - v;
  CHECK(dice_loss(inv, y) == doctest::Approx(1.0).epsilon(1e-6));
  const Tensor empty({1, 1, 4, 4}, 0.0);
  CHECK(dice_loss(empty, empty) == doctest::Approx(0.0));
}

TEST_CASE("bce of a uniform half map is ln 2") {
  Rng rng(2);
  const Tensor y = random_binary({1, 1, 4, 4}, rng);
  CHECK(bce_loss(Tensor({1, 1, 4, 4}, 0.5), y) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(bce_loss(y, y) <= -std::log(1.0 - 1e-7) + 1e-15);
}

TEST_CASE("losses match scalar recomputation on random inputs") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
    const Tensor y = random_binary({2, 1, 4, 4}, rng);
    const double d = dice_oracle(p, y), b = bce_oracle(p, y);
    CHECK(dice_loss(p, y) == doctest::Approx(d).epsilon(1e-12));
    CHECK(bce_loss(p, y) == doctest::Approx(b).epsilon(1e-12));
    CHECK(composite_loss(p, y) == dice_loss(p, y) + bce_loss(p, y));
    CHECK(composite_loss(p, y) == doctest::Approx(d + b).epsilon(1e-12));
    CHECK(dice_loss(p, y) >= 0.0);
    CHECK(bce_loss(p, y) >= 0.0);
    CHECK(dice_loss(p, y) <= 1.0);
  }
}

TEST_CASE("perfect prediction composite loss") {
  Rng rng(4);
  const Tensor y = random_binary({1, 1, 8, 8}, rng);
  CHECK(composite_loss(y, y) <= 2e-6);
}

TEST_CASE("dice term is invariant under a shared permutation") {
  Rng rng(5);
  const Tensor p = random_tensor({1, 1, 4, 4}, rng, 0.0, 1.0);
  const Tensor y = random_binary({1, 1, 4, 4}, rng);
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 15; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  Tensor pp(p.shape()), yp(y.shape());
  for (std::size_t i = 0; i < 16; ++i) {
    pp[i] = p[perm[i]];
    yp[i] = y[perm[i]];
  }
  CHECK(dice_loss(pp, yp) == doctest::Approx(dice_loss(p, y)).epsilon(1e-14));
}

TEST_CASE("composite loss gradient matches finite differences") {
  Rng rng(6);
  auto p = ag::parameter(random_tensor({1, 1, 4, 4}, rng, 0.05, 0.95));
  const Tensor y = random_binary({1, 1, 4, 4}, rng);
  CHECK(gradient_check([&] { return composite_loss(p, y); }, {p}) < 1e-5);
}

TEST_CASE("differentiable and plain forms agree") {
  Rng rng(7);
  const Tensor p = random_tensor({3, 1, 5, 5}, rng, 0.0, 1.0);
  const Tensor y = random_binary({3, 1, 5, 5}, rng);
  CHECK(composite_loss(ag::constant(p), y).value()[0] ==
        doctest::Approx(composite_loss(p, y)).epsilon(1e-14));
}

TEST_CASE("shape mismatch is an input error") {
  CHECK_THROWS_AS(dice_loss(Tensor({1, 1, 4, 4}), Tensor({1, 1, 4, 5})), InputError);
  CHECK_THROWS_AS(bce_loss(Tensor({1, 1, 4, 4}), Tensor({2, 1, 4, 4})), InputError);
}
