#pragma once

#include <cstdint>

namespace pidnet {

/// Counter-based generator: draw k of a stream is splitmix64(seed + k * golden).
/// Every draw depends only on (seed, counter), so streams are reproducible
/// bit-for-bit on any platform with IEEE doubles.
class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller (cosine branch only, two uniforms per draw).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream keyed by `stream`. Does not advance this one.
  RngState derive(std::uint64_t stream) const {
    return RngState(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ULL)), 0);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace pidnet
