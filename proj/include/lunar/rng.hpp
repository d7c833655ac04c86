#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lunar {

// Seedable random source with platform-stable draws. The engine is
// std::mt19937_64 (its output sequence is fixed by the standard); the
// distributions below are written out so results do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream derived from a base seed and a stream name.
  static Rng stream(std::uint64_t seed, std::string_view name);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal();
  // Always consumes the draws, so the stream position is independent of sigma.
  double normal(double mean, double sigma) {
    const double z = normal();
    return mean + sigma * z;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lunar
