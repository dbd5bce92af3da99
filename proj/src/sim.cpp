#include "simseg/sim.hpp"

#include <cmath>

#include "simseg/errors.hpp"
#include "simseg/ops.hpp"

namespace simseg {
namespace {

constexpr double kInitStd = 0.02;

void check_input(const Shape4& s, const SIMParams& p) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
    throw InputError("slice interaction input must be non-empty, got " +
                     s.str());
  if (s.c != p.channels)
    throw ConfigError("slice interaction parameters built for " +
                      std::to_string(p.channels) + " channels, input has " +
                      std::to_string(s.c));
}

void check_finite(const ag::Var& x) {
  if (!x.value().all_finite())
    throw InputError("slice interaction input contains non-finite values");
}

ag::Var truncated_param(Shape4 shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.truncated_normal(kInitStd);
  return ag::parameter(std::move(t));
}

ConvLayer truncated_conv(int cin, int cout, int k, int groups, bool with_bias,
                         Rng& rng) {
  ConvLayer l;
  l.weight = truncated_param({cout, cin / groups, k, k}, rng);
  if (with_bias) l.bias = ag::parameter(Tensor({1, cout, 1, 1}, 0.0));
  l.pad = k / 2;
  l.groups = groups;
  return l;
}

template <class NormFn>
SpatialAttentionVar spatial_impl(const ag::Var& x, const SIMParams& p,
                                 NormFn norm) {
  check_input(x.shape(), p);
  ag::Var logits = norm(p.spatial.forward(x));
  ag::Var a = ag::sigmoid(logits);
  return {a, ag::mul(x, a)};
}

template <class NormFn>
ag::Var relation_impl(const ag::Var& x, const SIMParams& p, NormFn norm) {
  check_input(x.shape(), p);
  ag::Var h = ag::relu(norm(p.dw1.forward(x)));
  return p.dw3.forward(h);
}

ag::Var weighted(const ag::Var& branch, double w, const ag::Var& learnable) {
  if (learnable) return ag::mul(branch, learnable);
  return ag::scale(branch, w);
}

template <class SpatialFn, class RelationFn>
ag::Var fuse_impl(const ag::Var& x, const SIMParams& p, const SIMConfig& cfg,
                  SpatialFn spatial, RelationFn relation) {
  check_input(x.shape(), p);
  check_finite(x);
  const bool learn = cfg.learnable_weights && p.fusion[0];
  ag::Var out = x;
  // Constant zero weights drop the branch so the residual path stays exact.
  if (learn || cfg.alpha != 0.0)
    out = ag::add(out, weighted(channel_attention(x, p).x_ca, cfg.alpha,
                                learn ? p.fusion[0] : ag::Var()));
  if (learn || cfg.beta != 0.0)
    out = ag::add(out, weighted(spatial(x).x_sa, cfg.beta,
                                learn ? p.fusion[1] : ag::Var()));
  if (learn || cfg.gamma != 0.0)
    out = ag::add(out, weighted(relation(x), cfg.gamma,
                                learn ? p.fusion[2] : ag::Var()));
  return out;
}

}  // namespace

void SIMConfig::validate() const {
  if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0))
    throw ConfigError("fusion weights must be non-negative");
  if (reduction_ratio < 1) throw ConfigError("reduction_ratio must be >= 1");
  auto odd = [](int k) { return k >= 1 && k % 2 == 1; };
  if (!odd(spatial_kernel))
    throw ConfigError("spatial_kernel must be an odd positive integer");
  if (!odd(relation_kernels[0]) || !odd(relation_kernels[1]))
    throw ConfigError("relation kernels must be odd positive integers");
}

int SIMConfig::hidden_units(int channels) const {
  return (channels + reduction_ratio - 1) / reduction_ratio;
}

void SIMParams::collect(const std::string& prefix, ParamList& params,
                        BufferList& buffers) {
  params.emplace_back(prefix + ".w1", w1);
  params.emplace_back(prefix + ".w2", w2);
  spatial.collect(prefix + ".spatial", params);
  spatial_norm.collect(prefix + ".spatial_norm", params, buffers);
  dw1.collect(prefix + ".dw1", params);
  dw1_norm.collect(prefix + ".dw1_norm", params, buffers);
  dw3.collect(prefix + ".dw3", params);
  static const char* names[] = {"alpha", "beta", "gamma"};
  for (int i = 0; i < 3; ++i)
    if (fusion[i]) params.emplace_back(prefix + "." + names[i], fusion[i]);
}

SIMParams SIMParams::clone() const {
  SIMParams c;
  c.channels = channels;
  c.w1 = ag::clone_leaf(w1);
  c.w2 = ag::clone_leaf(w2);
  c.spatial = spatial.clone();
  c.spatial_norm = spatial_norm.clone();
  c.dw1 = dw1.clone();
  c.dw1_norm = dw1_norm.clone();
  c.dw3 = dw3.clone();
  for (int i = 0; i < 3; ++i)
    if (fusion[i]) c.fusion[i] = ag::clone_leaf(fusion[i]);
  return c;
}

SIMParams init_sim_params(int channels, const SIMConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (cfg.reduction_ratio > channels)
    throw ConfigError("reduction_ratio " + std::to_string(cfg.reduction_ratio) +
                      " exceeds channel count " + std::to_string(channels));
  Rng rng(seed);
  SIMParams p;
  p.channels = channels;
  const int hidden = cfg.hidden_units(channels);
  // Inputs are non-negative, so a non-negative W1 starts every hidden unit
  // active.
  p.w1 = truncated_param({hidden, channels, 1, 1}, rng);
  for (double& v : p.w1.mutable_value().values()) v = std::abs(v);
  p.w2 = truncated_param({channels, hidden, 1, 1}, rng);
  // Biases cancel under the following normalisation.
  const bool with_bias = cfg.norm == NormKind::identity;
  p.spatial =
      truncated_conv(channels, 1, cfg.spatial_kernel, 1, with_bias, rng);
  p.spatial_norm = NormLayer::make(1, cfg.norm);
  p.dw1 = truncated_conv(channels, channels, cfg.relation_kernels[0], channels,
                         with_bias, rng);
  p.dw1_norm = NormLayer::make(channels, cfg.norm);
  p.dw3 = truncated_conv(channels, channels, cfg.relation_kernels[1], channels,
                         with_bias, rng);
  if (cfg.learnable_weights) {
    p.fusion[0] = ag::parameter(Tensor({1, 1, 1, 1}, cfg.alpha));
    p.fusion[1] = ag::parameter(Tensor({1, 1, 1, 1}, cfg.beta));
    p.fusion[2] = ag::parameter(Tensor({1, 1, 1, 1}, cfg.gamma));
  }
  return p;
}

ChannelAttentionVar channel_attention(const ag::Var& x, const SIMParams& p) {
  check_input(x.shape(), p);
  ag::Var pooled = ag::global_avg_pool(x);
  ag::Var hidden = ag::relu(ag::conv2d(pooled, p.w1, ag::Var(), 0));
  ag::Var a = ag::sigmoid(ag::conv2d(hidden, p.w2, ag::Var(), 0));
  return {a, ag::mul(x, a)};
}

SpatialAttentionVar spatial_attention(const ag::Var& x, SIMParams& p,
                                      bool training) {
  return spatial_impl(x, p, [&](const ag::Var& v) {
    return p.spatial_norm.forward(v, training);
  });
}

ag::Var slice_relation(const ag::Var& x, SIMParams& p, bool training) {
  return relation_impl(
      x, p, [&](const ag::Var& v) { return p.dw1_norm.forward(v, training); });
}

ag::Var sim_forward(const ag::Var& x, SIMParams& p, const SIMConfig& cfg,
                    bool training) {
  return fuse_impl(
      x, p, cfg,
      [&](const ag::Var& v) { return spatial_attention(v, p, training); },
      [&](const ag::Var& v) { return slice_relation(v, p, training); });
}

ChannelAttention channel_attention(const FeatureStack& x, const SIMParams& p) {
  ag::NoGradGuard guard;
  auto r = channel_attention(ag::constant(x), p);
  return {r.attention.value(), r.x_ca.value()};
}

SpatialAttention spatial_attention(const FeatureStack& x, const SIMParams& p) {
  ag::NoGradGuard guard;
  auto r = spatial_impl(ag::constant(x), p, [&](const ag::Var& v) {
    return p.spatial_norm.forward_eval(v);
  });
  return {r.attention.value(), r.x_sa.value()};
}

FeatureStack slice_relation(const FeatureStack& x, const SIMParams& p) {
  ag::NoGradGuard guard;
  return relation_impl(ag::constant(x), p, [&](const ag::Var& v) {
           return p.dw1_norm.forward_eval(v);
         })
      .value();
}

ag::Var sim_forward_eval(const ag::Var& x, const SIMParams& p,
                         const SIMConfig& cfg) {
  auto eval_spatial = [&](const ag::Var& v) {
    return spatial_impl(v, p, [&](const ag::Var& u) {
      return p.spatial_norm.forward_eval(u);
    });
  };
  auto eval_relation = [&](const ag::Var& v) {
    return relation_impl(v, p, [&](const ag::Var& u) {
      return p.dw1_norm.forward_eval(u);
    });
  };
  return fuse_impl(x, p, cfg, eval_spatial, eval_relation);
}

FeatureStack sim_forward(const FeatureStack& x, const SIMParams& p,
                         const SIMConfig& cfg) {
  ag::NoGradGuard guard;
  return sim_forward_eval(ag::constant(x), p, cfg).value();
}

}  // namespace simseg
