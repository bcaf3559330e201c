#pragma once

#include <cstdint>
#include <random>

#include "alnet/real.hpp"

ALNET_NS_BEGIN

/// Seeded generator with portable draws (the distributions in <random> are
/// implementation-defined, these are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0,1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0,n).
  std::uint64_t below(std::uint64_t n) { return n ? engine_() % n : 0; }
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with stream identifiers into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

ALNET_NS_END
