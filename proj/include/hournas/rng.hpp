#pragma once

#include <cstdint>
#include <random>

namespace hournas {

/// Seeded random source with a portable, documented output sequence.
///
/// The engine is `std::mt19937_64`, whose sequence is fixed by the standard.
/// The standard distributions are implementation-defined, so the derived
/// variates are computed here:
///   uniform()    = (next() >> 11) * 2^-53            in [0, 1)
///   normal()     = Box-Muller on two uniforms, cosine branch only
///   gumbel()     = -log(-log(u)) with u drawn from (0, 1)
///   index(n)     = floor(uniform() * n)
/// Any implementation following this recipe reproduces the same streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  /// Uniform in the open interval (0, 1).
  double uniform_open();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double gumbel();
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream derived from this one (consumes one draw).
  Rng split() { return Rng(next() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hournas
