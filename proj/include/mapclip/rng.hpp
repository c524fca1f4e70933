#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "mapclip/common.hpp"

namespace mapclip::numerics {

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic random source addressed by (seed, stream name). The same
// pair always yields the same sequence, on every platform; differently
// named streams are decorrelated. Distributions are implemented by hand
// because the std:: distribution algorithms are not pinned by the standard.
class SeededStream {
 public:
  SeededStream(uint64_t seed, std::string_view name)
      : engine_(splitmix64(seed ^ splitmix64(fnv1a64(name)))) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of randomness.
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // Inclusive on both ends; unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    require(hi >= lo, "uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next_u64());  // full range
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return lo + static_cast<int64_t>(x % span);
  }

  bool bernoulli(double p) { return u01() < p; }

  // Box-Muller; the paired draw is cached so consecutive calls alternate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = u01();
    double u2 = u01();
    while (u1 <= 0.0) u1 = u01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mapclip::numerics
