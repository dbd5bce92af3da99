#include "simseg/layers.hpp"

#include <cmath>

#include "simseg/errors.hpp"
#include "simseg/ops.hpp"

namespace simseg {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::batch: return "batch";
    case NormKind::instance: return "instance";
    case NormKind::identity: return "identity";
  }
  return "?";
}

NormKind parse_norm_kind(const std::string& s) {
  if (s == "batch") return NormKind::batch;
  if (s == "instance") return NormKind::instance;
  if (s == "identity") return NormKind::identity;
  throw ConfigError("unknown normalisation kind '" + s + "'");
}

NormLayer NormLayer::make(int channels, NormKind kind) {
  if (channels < 1) throw ConfigError("normalisation needs >= 1 channel");
  NormLayer n;
  n.kind = kind;
  n.gamma = ag::parameter(Tensor({1, channels, 1, 1}, 1.0));
  n.beta = ag::parameter(Tensor({1, channels, 1, 1}, 0.0));
  n.running_mean = Tensor({1, channels, 1, 1}, 0.0);
  n.running_var = Tensor({1, channels, 1, 1}, 1.0);
  return n;
}

ag::Var NormLayer::forward(const ag::Var& x, bool training) {
  if (!training || kind != NormKind::batch) return forward_eval(x);
  Tensor mean, var;
  ag::Var y = ag::batch_norm_train(x, gamma, beta, eps, &mean, &var);
  // Running variance tracks the unbiased estimate.
  const double count = static_cast<double>(x.shape().n) * x.shape().plane();
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
    running_var[c] =
        (1.0 - momentum) * running_var[c] + momentum * var[c] * unbias;
  }
  return y;
}

ag::Var NormLayer::forward_eval(const ag::Var& x) const {
  switch (kind) {
    case NormKind::batch:
      return ag::batch_norm_eval(x, gamma, beta, running_mean, running_var,
                                 eps);
    case NormKind::instance:
      return ag::instance_norm(x, gamma, beta, eps);
    case NormKind::identity:
      return x;
  }
  return x;
}

void NormLayer::collect(const std::string& prefix, ParamList& params,
                        BufferList& buffers) {
  params.emplace_back(prefix + ".gamma", gamma);
  params.emplace_back(prefix + ".beta", beta);
  buffers.emplace_back(prefix + ".running_mean", &running_mean);
  buffers.emplace_back(prefix + ".running_var", &running_var);
}

NormLayer NormLayer::clone() const {
  NormLayer n = *this;
  n.gamma = ag::clone_leaf(gamma);
  n.beta = ag::clone_leaf(beta);
  return n;
}

ConvLayer ConvLayer::he_normal(int cin, int cout, int k, bool with_bias,
                               Rng& rng) {
  if (cin < 1 || cout < 1 || k < 1 || k % 2 == 0)
    throw ConfigError("invalid convolution geometry");
  ConvLayer l;
  Tensor w({cout, cin, k, k});
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  for (double& v : w.values()) v = rng.normal(0.0, stddev);
  l.weight = ag::parameter(std::move(w));
  if (with_bias) l.bias = ag::parameter(Tensor({1, cout, 1, 1}, 0.0));
  l.pad = k / 2;
  return l;
}

ag::Var ConvLayer::forward(const ag::Var& x) const {
  return ag::conv2d(x, weight, bias, pad, groups);
}

void ConvLayer::collect(const std::string& prefix, ParamList& params) const {
  params.emplace_back(prefix + ".weight", weight);
  if (bias) params.emplace_back(prefix + ".bias", bias);
}

ConvLayer ConvLayer::clone() const {
  ConvLayer l = *this;
  l.weight = ag::clone_leaf(weight);
  if (bias) l.bias = ag::clone_leaf(bias);
  return l;
}

}  // namespace simseg
