#pragma once

#include <string>
#include <utility>
#include <vector>

#include "simseg/autograd.hpp"
#include "simseg/rng.hpp"

namespace simseg {

enum class NormKind { batch, instance, identity };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& s);

// Named views onto learnable parameters and non-learnable buffers. Parameter
// Vars alias the owning layer's storage.
using ParamList = std::vector<std::pair<std::string, ag::Var>>;
using BufferList = std::vector<std::pair<std::string, Tensor*>>;

// Per-channel normalisation followed by a learnable affine (gamma, beta).
// Batch kind keeps running averages used in evaluation; instance kind always
// normalises each (sample, channel) plane; identity passes input through.
struct NormLayer {
  NormKind kind = NormKind::batch;
  ag::Var gamma;
  ag::Var beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static NormLayer make(int channels, NormKind kind);

  int channels() const { return gamma.shape().c; }
  ag::Var forward(const ag::Var& x, bool training);
  ag::Var forward_eval(const ag::Var& x) const;

  void collect(const std::string& prefix, ParamList& params,
               BufferList& buffers);
  NormLayer clone() const;
};

struct ConvLayer {
  ag::Var weight;  // (Cout, Cin / groups, k, k)
  ag::Var bias;    // (1, Cout, 1, 1) or empty
  int pad = 0;
  int groups = 1;

  // He-normal weights, zero bias; `same` padding.
  static ConvLayer he_normal(int cin, int cout, int k, bool with_bias,
                             Rng& rng);

  int in_channels() const { return weight.shape().c * groups; }
  int out_channels() const { return weight.shape().n; }
  ag::Var forward(const ag::Var& x) const;

  void collect(const std::string& prefix, ParamList& params) const;
  ConvLayer clone() const;
};

}  // namespace simseg
