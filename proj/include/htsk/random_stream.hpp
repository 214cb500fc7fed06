#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace htsk {

// Counter-based pseudo-random stream.
//
// A stream is identified by a 64-bit key derived from (seed, index); the n-th
// output is a pure function of (key, n). Substreams are derived by hashing the
// parent key with a child index, so trial i of a Monte Carlo run always sees
// the same numbers regardless of how trials are scheduled across workers.
// All variate transforms below are written out explicitly (no <random>
// distributions) so outputs do not depend on the standard library vendor.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t index = 0)
      : seed_(seed), key_(derive(mix(seed ^ 0x6a09e667f3bcc909ULL), index)) {}

  RandomStream substream(std::uint64_t index) const {
    RandomStream child(*this);
    child.key_ = derive(key_, index);
    child.counter_ = 0;
    return child;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(mix(key_ + counter_ * kGolden) ^ key_);
  }

  // Uniform on the open interval (0, 1); 53 random bits.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  double sign() { return coin() ? 1.0 : -1.0; }

  // Uniform integer in [0, bound) by rejection; bound must be positive.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
  }

  double exponential() { return -std::log(uniform()); }

  // Box-Muller; consumes two uniforms per call and keeps no cached variate.
  double normal() {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    return r * std::cos(2.0 * std::numbers::pi * uniform());
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  // SplitMix64 finalizer.
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t index) {
    return mix(key ^ mix(index + kGolden));
  }

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace htsk
