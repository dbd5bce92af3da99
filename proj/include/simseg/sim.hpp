#pragma once

#include <array>
#include <cstdint>

#include "simseg/layers.hpp"

// Slice interaction block: three parallel attention branches over the same
// input, fused back onto it through a weighted residual sum.
//
//   channel : A_ch = sigmoid(W2 relu(W1 gap(x))),      x_ca = x * A_ch
//   spatial : A_sp = sigmoid(norm(conv_kxk(x) -> 1ch)), x_sa = x * A_sp
//   relation: x_rel = dwconv3(relu(norm(dwconv1(x))))
//   output  : x + alpha x_ca + beta x_sa + gamma x_rel
namespace simseg {

struct SIMConfig {
  double alpha = 0.3;
  double beta = 0.3;
  double gamma = 0.4;
  int reduction_ratio = 2;
  int spatial_kernel = 7;
  std::array<int, 2> relation_kernels{1, 3};
  NormKind norm = NormKind::batch;
  // Exposes alpha/beta/gamma as trainable scalars initialised to the values
  // above.
  bool learnable_weights = false;

  void validate() const;
  // ceil(C / r)
  int hidden_units(int channels) const;
};

// Parameters of one block. Copies share storage with the original; use
// clone() for an independent set.
struct SIMParams {
  int channels = 0;
  ag::Var w1;  // (hidden, C, 1, 1)
  ag::Var w2;  // (C, hidden, 1, 1)
  ConvLayer spatial;  // (1, C, k, k); bias only when norm is identity
  NormLayer spatial_norm;
  ConvLayer dw1;  // depthwise (C, 1, k1, k1); bias as for spatial
  NormLayer dw1_norm;
  ConvLayer dw3;  // depthwise (C, 1, k3, k3); bias as for spatial
  std::array<ag::Var, 3> fusion;  // learnable alpha, beta, gamma (optional)

  void collect(const std::string& prefix, ParamList& params,
               BufferList& buffers);
  SIMParams clone() const;
};

// Truncated-normal (std 0.02, cut at 2 sigma) for every kernel and matrix,
// with W1 taken in absolute value. Zero biases, unit/zero normalisation
// affine. Deterministic in `seed`.
SIMParams init_sim_params(int channels, const SIMConfig& cfg,
                          std::uint64_t seed);

// --- differentiable form (training) ---------------------------------------

struct ChannelAttentionVar {
  ag::Var attention;  // (B, C, 1, 1)
  ag::Var x_ca;
};
struct SpatialAttentionVar {
  ag::Var attention;  // (B, 1, H, W)
  ag::Var x_sa;
};

ChannelAttentionVar channel_attention(const ag::Var& x, const SIMParams& p);
SpatialAttentionVar spatial_attention(const ag::Var& x, SIMParams& p,
                                      bool training);
ag::Var slice_relation(const ag::Var& x, SIMParams& p, bool training);
ag::Var sim_forward(const ag::Var& x, SIMParams& p, const SIMConfig& cfg,
                    bool training);
// Evaluation-mode graph (running statistics, parameters untouched).
ag::Var sim_forward_eval(const ag::Var& x, const SIMParams& p,
                         const SIMConfig& cfg);

// --- evaluation form (pure, read-only parameters) ---------------------------

struct ChannelAttention {
  Tensor attention;
  FeatureStack x_ca;
};
struct SpatialAttention {
  Tensor attention;
  FeatureStack x_sa;
};

ChannelAttention channel_attention(const FeatureStack& x, const SIMParams& p);
SpatialAttention spatial_attention(const FeatureStack& x, const SIMParams& p);
FeatureStack slice_relation(const FeatureStack& x, const SIMParams& p);
FeatureStack sim_forward(const FeatureStack& x, const SIMParams& p,
                         const SIMConfig& cfg);

}  // namespace simseg
