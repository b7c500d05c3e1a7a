#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace r3d {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Decorrelated seed for a named sub-stream of a base seed.
inline constexpr std::uint64_t stream_seed(std::uint64_t base, std::uint64_t stream,
                                           std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) + index);
}

namespace streams {
inline constexpr std::uint64_t kBatch = 0x62617463686d6978ULL;
inline constexpr std::uint64_t kDownsample = 0x646f776e73616d70ULL;
inline constexpr std::uint64_t kLoss = 0x6c6f73736e6f6973ULL;
inline constexpr std::uint64_t kRecon = 0x7265636f6e737472ULL;
inline constexpr std::uint64_t kShape = 0x736861706567656eULL;
inline constexpr std::uint64_t kRotate = 0x726f746174656378ULL;
inline constexpr std::uint64_t kScale = 0x7363616c65647277ULL;
}  // namespace streams

// Deterministic generator: all distributions are derived from raw mt19937_64
// words by fixed arithmetic, so sequences are reproducible across platforms
// for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1p-53;
  }

  // (0, 1), never returns an endpoint
  double uniform_open() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1p-53;
  }

  double uniform_range(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }

  // unbiased integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  // standard normal via Box-Muller on (0,1) x [0,1)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace r3d
