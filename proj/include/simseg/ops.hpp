#pragma once

#include <span>

#include "simseg/autograd.hpp"

// Differentiable tensor ops used by the attention block and the network.
// All spatial ops are stride 1 unless stated.
namespace simseg::ag {

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);

// Elementwise a * b where every dimension of b either equals a's or is 1.
Var mul(const Var& a, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);

// weight: (Cout, Cin / groups, k, k). groups must be 1 or Cin (depthwise,
// which additionally needs Cout == Cin). bias may be empty or (1,Cout,1,1).
// Per-channel vectors (bias, gamma, beta) are always shaped (1,C,1,1).
// Output spatial size is H + 2*pad - k + 1.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad,
           int groups = 1);

// (B,C,H,W) -> (B,C,1,1)
Var global_avg_pool(const Var& x);

Var max_pool2(const Var& x);
Var upsample2(const Var& x);  // nearest neighbour, factor 2
Var concat_channels(std::span<const Var> parts);

Var sum(const Var& x);   // -> (1,1,1,1)
Var mean(const Var& x);  // -> (1,1,1,1)

// Per-channel normalisation with batch statistics over (N,H,W). The biased
// batch mean/variance are written to the out-params for running averages.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta,
                     double eps, Tensor* batch_mean, Tensor* batch_var);
// Normalisation with fixed statistics (evaluation mode).
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta,
                    const Tensor& mean, const Tensor& var, double eps);
// Per-(sample, channel) statistics over (H,W).
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// When enabled on the current thread, convolution outputs are rounded to
// single precision (CPU stand-in for mixed-precision training).
void set_reduced_precision(bool enabled);
bool reduced_precision();

}  // namespace simseg::ag
