#pragma once

// Counter-style deterministic RNG: a base seed plus (domain, index) derives an
// independent substream, so parallel workers never share or reorder draws.

#include <cmath>
#include <cstdint>

namespace icse {

// splitmix64 finalizer; also used to seed the main generator.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named lanes of the seed space. Streams from different domains are disjoint
// by construction; training data can never collide with test data.
enum class SeedDomain : std::uint64_t {
  train_data = 1,
  calibration = 2,
  test_data = 3,
  weight_init = 4,
  dataset_gen = 5,
  resample = 6,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedDomain domain,
                                 std::uint64_t index) noexcept {
  return mix64(mix64(mix64(base) ^ static_cast<std::uint64_t>(domain)) ^ index);
}

// xoshiro256** (Blackman & Vigna). Fully specified, platform independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& word : state_) {
      sm += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = sm;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform01();
  }

  // Standard normal via Box-Muller; consumes exactly two uniforms per draw.
  double normal() noexcept {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) noexcept {
    return mean + stddev * normal();
  }

  // Fair coin.
  bool flip() noexcept { return (next_u64() >> 63) != 0; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace icse
