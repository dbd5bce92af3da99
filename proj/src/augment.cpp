#include "simseg/augment.hpp"

#include <cmath>
#include <vector>

namespace simseg {
namespace {

enum class Border { zero, clamp };

// Every op here is axis-aligned, so a warp is two 1-D coordinate maps.
SliceSample warp(const SliceSample& s, const std::vector<double>& src_x,
                 const std::vector<double>& src_y, Border border) {
  const int h = s.input.h(), w = s.input.w();
  SliceSample out = s;
  auto fetch = [&](const double* p, int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) {
      if (border == Border::zero) return 0.0;
      y = std::clamp(y, 0, h - 1);
      x = std::clamp(x, 0, w - 1);
    }
    return p[y * w + x];
  };
  for (int c = 0; c < s.input.c(); ++c) {
    const double* src = s.input.plane(0, c);
    double* dst = out.input.plane(0, c);
    for (int y = 0; y < h; ++y) {
      const double fy = std::floor(src_y[y]);
      const int y0 = static_cast<int>(fy);
      const double wy = src_y[y] - fy;
      for (int x = 0; x < w; ++x) {
        const double fx = std::floor(src_x[x]);
        const int x0 = static_cast<int>(fx);
        const double wx = src_x[x] - fx;
        double v = (1 - wy) * (1 - wx) * fetch(src, y0, x0);
        if (wx != 0.0) v += (1 - wy) * wx * fetch(src, y0, x0 + 1);
        if (wy != 0.0) {
          v += wy * (1 - wx) * fetch(src, y0 + 1, x0);
          if (wx != 0.0) v += wy * wx * fetch(src, y0 + 1, x0 + 1);
        }
        dst[y * w + x] = v;
      }
    }
  }
  const double* m = s.target.plane(0, 0);
  double* dm = out.target.plane(0, 0);
  for (int y = 0; y < h; ++y) {
    const int ny = static_cast<int>(std::floor(src_y[y] + 0.5));
    for (int x = 0; x < w; ++x) {
      const int nx = static_cast<int>(std::floor(src_x[x] + 0.5));
      dm[y * w + x] = fetch(m, ny, nx);
    }
  }
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(shift_frac >= 0.0 && shift_frac < 1.0))
    throw ConfigError("augment.shift_frac must lie in [0, 1)");
  if (!(scale_min > 0.0 && scale_min <= scale_max))
    throw ConfigError("augment scale range must satisfy 0 < min <= max");
  if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max &&
        crop_area_max <= 1.0))
    throw ConfigError("augment crop area range must satisfy 0 < min <= max <= 1");
  if (!prob(hflip_prob) || !prob(per_op_prob))
    throw ConfigError("augment probabilities must lie in [0, 1]");
}

SliceSample apply_affine(const SliceSample& s, const AffineParams& a) {
  if (!(a.scale > 0.0)) throw InputError("affine scale must be positive");
  const int h = s.input.h(), w = s.input.w();
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  std::vector<double> sx(w), sy(h);
  for (int x = 0; x < w; ++x) sx[x] = (x - cx - a.shift_x) / a.scale + cx;
  for (int y = 0; y < h; ++y) sy[y] = (y - cy - a.shift_y) / a.scale + cy;
  return warp(s, sx, sy, Border::zero);
}

SliceSample apply_hflip(const SliceSample& s) {
  const int h = s.input.h(), w = s.input.w();
  std::vector<double> sx(w), sy(h);
  for (int x = 0; x < w; ++x) sx[x] = w - 1 - x;
  for (int y = 0; y < h; ++y) sy[y] = y;
  return warp(s, sx, sy, Border::zero);
}

SliceSample apply_crop_resize(const SliceSample& s, const CropParams& c) {
  if (!(c.height > 0.0 && c.width > 0.0))
    throw InputError("crop window must be non-empty");
  const int h = s.input.h(), w = s.input.w();
  std::vector<double> sx(w), sy(h);
  for (int x = 0; x < w; ++x) sx[x] = c.x0 + (x + 0.5) * c.width / w - 0.5;
  for (int y = 0; y < h; ++y) sy[y] = c.y0 + (y + 0.5) * c.height / h - 0.5;
  return warp(s, sx, sy, Border::clamp);
}

AffineParams draw_affine(const AugmentConfig& cfg, Rng& rng, int height,
                         int width) {
  AffineParams a;
  a.shift_x = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * width;
  a.shift_y = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * height;
  a.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  return a;
}

CropParams draw_crop(const AugmentConfig& cfg, Rng& rng, int height,
                     int width) {
  const double f = rng.uniform(cfg.crop_area_min, cfg.crop_area_max);
  const double side = std::sqrt(f);
  CropParams c;
  c.height = side * height;
  c.width = side * width;
  c.area_fraction = (c.height * c.width) / (static_cast<double>(height) * width);
  c.x0 = rng.uniform(0.0, width - c.width);
  c.y0 = rng.uniform(0.0, height - c.height);
  return c;
}

SliceSample random_affine(const SliceSample& s, const AugmentConfig& cfg,
                          Rng& rng, AffineParams* applied) {
  const AffineParams a = draw_affine(cfg, rng, s.input.h(), s.input.w());
  if (applied) *applied = a;
  return apply_affine(s, a);
}

SliceSample random_hflip(const SliceSample& s, const AugmentConfig& cfg,
                         Rng& rng, bool* flipped) {
  const bool f = rng.bernoulli(cfg.hflip_prob);
  if (flipped) *flipped = f;
  return f ? apply_hflip(s) : s;
}

SliceSample random_crop_resize(const SliceSample& s, const AugmentConfig& cfg,
                               Rng& rng, CropParams* applied) {
  const CropParams c = draw_crop(cfg, rng, s.input.h(), s.input.w());
  if (applied) *applied = c;
  return apply_crop_resize(s, c);
}

SliceSample apply_pipeline(const SliceSample& s, const AugmentConfig& cfg,
                           Rng& rng, AppliedAugment* applied) {
  AppliedAugment record;
  SliceSample out = s;
  if (rng.bernoulli(cfg.per_op_prob)) {
    record.affine = draw_affine(cfg, rng, s.input.h(), s.input.w());
    out = apply_affine(out, *record.affine);
  }
  if (rng.bernoulli(cfg.per_op_prob)) {
    record.flipped = true;
    out = apply_hflip(out);
  }
  if (rng.bernoulli(cfg.per_op_prob)) {
    record.crop = draw_crop(cfg, rng, s.input.h(), s.input.w());
    out = apply_crop_resize(out, *record.crop);
  }
  if (applied) *applied = record;
  return out;
}

}  // namespace simseg
