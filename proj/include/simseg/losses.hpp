#pragma once

#include "simseg/autograd.hpp"

// Segmentation objectives on probability maps p and binary targets y, both
// shaped (B,1,H,W).
namespace simseg {

inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kBceClip = 1e-7;

// Soft Dice per sample, 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps),
// averaged over the batch. Empty prediction on an empty target gives 0.
double dice_loss(const Tensor& p, const Tensor& y);
// Mean pixel binary cross-entropy with p clipped to [eps, 1 - eps].
double bce_loss(const Tensor& p, const Tensor& y);
// dice_loss + bce_loss.
double composite_loss(const Tensor& p, const Tensor& y);

ag::Var dice_loss(const ag::Var& p, const Tensor& y);
ag::Var bce_loss(const ag::Var& p, const Tensor& y);
ag::Var composite_loss(const ag::Var& p, const Tensor& y);

}  // namespace simseg
