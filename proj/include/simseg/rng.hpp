#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace simseg {

// Mixes a base seed with stream indices so that every (seed, index...) tuple
// gets an independent generator regardless of evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return unit_(engine_); }  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  // Normal sample redrawn until it lies within `bound_sigmas` deviations.
  double truncated_normal(double stddev, double bound_sigmas = 2.0);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }
  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace simseg
