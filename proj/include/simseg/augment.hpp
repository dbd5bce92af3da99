#pragma once

#include <optional>

#include "simseg/data.hpp"
#include "simseg/rng.hpp"

// Training-time augmentation. Every op transforms the image channels and the
// target with the same parameters: images bilinearly, masks by nearest
// neighbour, pixels mapped from outside the frame set to 0.
namespace simseg {

struct AugmentConfig {
  double shift_frac = 0.10;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double hflip_prob = 0.5;
  double crop_area_min = 0.70;
  double crop_area_max = 0.90;
  double per_op_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Output pixel p samples the input at (p - centre - shift) / scale + centre.
struct AffineParams {
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double scale = 1.0;
};

// Crop window in continuous pixel coordinates, same aspect as the frame.
struct CropParams {
  double x0 = 0.0;
  double y0 = 0.0;
  double height = 0.0;
  double width = 0.0;
  double area_fraction = 1.0;
};

struct AppliedAugment {
  std::optional<AffineParams> affine;
  bool flipped = false;
  std::optional<CropParams> crop;
};

SliceSample apply_affine(const SliceSample& s, const AffineParams& a);
SliceSample apply_hflip(const SliceSample& s);
SliceSample apply_crop_resize(const SliceSample& s, const CropParams& c);

AffineParams draw_affine(const AugmentConfig& cfg, Rng& rng, int height,
                         int width);
CropParams draw_crop(const AugmentConfig& cfg, Rng& rng, int height, int width);

SliceSample random_affine(const SliceSample& s, const AugmentConfig& cfg,
                          Rng& rng, AffineParams* applied = nullptr);
// Flips with probability cfg.hflip_prob.
SliceSample random_hflip(const SliceSample& s, const AugmentConfig& cfg,
                         Rng& rng, bool* flipped = nullptr);
SliceSample random_crop_resize(const SliceSample& s, const AugmentConfig& cfg,
                               Rng& rng, CropParams* applied = nullptr);

// affine -> flip -> crop, each gated independently at cfg.per_op_prob. A
// gated-in flip always flips.
SliceSample apply_pipeline(const SliceSample& s, const AugmentConfig& cfg,
                           Rng& rng, AppliedAugment* applied = nullptr);

}  // namespace simseg
