#include <cmath>

#include "doctest.h"
#include "simseg/augment.hpp"
#include "test_util.hpp"

using namespace simseg;

namespace {

SliceSample sample(int h, int w, Rng& rng) {
  SliceSample s;
  s.input = Tensor({1, 6, h, w});
  s.target = Tensor({1, 1, h, w});
  for (double& v : s.input.values()) v = std::round(rng.uniform(0.0, 255.0));
  for (int y = h / 4; y < 3 * h / 4; ++y)
    for (int x = w / 5; x < 2 * w / 3; ++x) s.target(0, 0, y, x) = 1.0;
  return s;
}

bool binary(const Tensor& t) {
  for (double v : t.values())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

}  // namespace

TEST_CASE("identity affine") {
  Rng rng(1);
  const SliceSample s = sample(12, 10, rng);
  const SliceSample out = apply_affine(s, {0.0, 0.0, 1.0});
  CHECK(out.input.vector() == s.input.vector());
  CHECK(out.target.vector() == s.target.vector());
}

TEST_CASE("integer shift moves a delta exactly") {
  SliceSample s;
  s.input = Tensor({1, 6, 9, 9});
  s.target = Tensor({1, 1, 9, 9});
  for (int c = 0; c < 6; ++c) s.input(0, c, 4, 4) = 200.0;
  s.target(0, 0, 4, 4) = 1.0;
  const SliceSample out = apply_affine(s, {2.0, -3.0, 1.0});
  for (int c = 0; c < 6; ++c) {
    CHECK(out.input(0, c, 1, 6) == 200.0);
    CHECK(out.input.plane(0, c)[0] == 0.0);
  }
  CHECK(out.target(0, 0, 1, 6) == 1.0);
  CHECK(out.target.sum() == 1.0);
  CHECK(out.input.sum() == 6 * 200.0);
}

TEST_CASE("drawn affine parameters respect the bounds") {
  AugmentConfig cfg;
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const AffineParams a = draw_affine(cfg, rng, 64, 48);
    CHECK(std::abs(a.shift_y) <= 0.10 * 64);
    CHECK(std::abs(a.shift_x) <= 0.10 * 48);
    CHECK((a.scale >= 0.9 && a.scale <= 1.1));
  }
}

TEST_CASE("flip is an involution and couples image and mask") {
  Rng rng(3);
  const SliceSample s = sample(8, 11, rng);
  const SliceSample f = apply_hflip(s);
  for (int c = 0; c < 6; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 11; ++x) CHECK(f.input(0, c, y, x) == s.input(0, c, y, 10 - x));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 11; ++x) CHECK(f.target(0, 0, y, x) == s.target(0, 0, y, 10 - x));
  const SliceSample ff = apply_hflip(f);
  CHECK(ff.input.vector() == s.input.vector());
  CHECK(ff.target.vector() == s.target.vector());
}

TEST_CASE("flip frequency") {
  AugmentConfig cfg;
  Rng rng(4);
  SliceSample s;
  s.input = Tensor({1, 2, 2, 2});
  s.target = Tensor({1, 1, 2, 2});
  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    bool f = false;
    random_hflip(s, cfg, rng, &f);
    flips += f;
  }
  const double freq = flips / 10000.0;
  CHECK(freq >= 0.48);
  CHECK(freq <= 0.52);
}

TEST_CASE("crop keeps dimensions and area bounds") {
  AugmentConfig cfg;
  Rng rng(5);
  const SliceSample s = sample(16, 20, rng);
  for (int i = 0; i < 1000; ++i) {
    CropParams c;
    const SliceSample out = random_crop_resize(s, cfg, rng, &c);
    CHECK(c.area_fraction >= 0.70 - 1e-12);
    CHECK(c.area_fraction <= 0.90 + 1e-12);
    CHECK(c.x0 >= 0.0);
    CHECK(c.y0 >= 0.0);
    CHECK(c.x0 + c.width <= 20.0 + 1e-9);
    CHECK(c.y0 + c.height <= 16.0 + 1e-9);
    CHECK(c.height / 16.0 == doctest::Approx(c.width / 20.0));
    if (i < 50) {
      CHECK(out.input.shape() == s.input.shape());
      CHECK(out.target.shape() == s.target.shape());
      CHECK(binary(out.target));
      CHECK(out.input.vector() != s.input.vector());
    }
  }
}

TEST_CASE("pipeline gating") {
  Rng rng(6);
  const SliceSample s = sample(12, 12, rng);
  AugmentConfig off;
  off.per_op_prob = 0.0;
  Rng r0(9);
  const SliceSample id = apply_pipeline(s, off, r0);
  CHECK(id.input.vector() == s.input.vector());
  CHECK(id.target.vector() == s.target.vector());

  AugmentConfig cfg;
  Rng a(11), b(11);
  const SliceSample x = apply_pipeline(s, cfg, a);
  const SliceSample y = apply_pipeline(s, cfg, b);
  CHECK(x.input.vector() == y.input.vector());
  CHECK(x.target.vector() == y.target.vector());
}

TEST_CASE("pipeline at probability one is the manual composition") {
  Rng rng(7);
  const SliceSample s = sample(14, 14, rng);
  AugmentConfig cfg;
  cfg.per_op_prob = 1.0;
  Rng r(21);
  AppliedAugment applied;
  const SliceSample out = apply_pipeline(s, cfg, r, &applied);
  REQUIRE(applied.affine.has_value());
  REQUIRE(applied.crop.has_value());
  CHECK(applied.flipped);
  const SliceSample manual =
      apply_crop_resize(apply_hflip(apply_affine(s, *applied.affine)), *applied.crop);
  CHECK(out.input.vector() == manual.input.vector());
  CHECK(out.target.vector() == manual.target.vector());
  CHECK(binary(out.target));
}

TEST_CASE("invalid configurations") {
  AugmentConfig c;
  c.scale_min = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.crop_area_max = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.per_op_prob = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
