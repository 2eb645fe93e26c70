// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace refseg {

// splitmix64, used to derive independent seeds from a root seed plus
// stream identifiers (scene id, round index, ...).
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = mix64(root);
  s = mix64(s ^ (a * 0x9e3779b97f4a7c15ULL));
  s = mix64(s ^ (b * 0xc2b2ae3d27d4eb4fULL));
  s = mix64(s ^ (c * 0x165667b19e3779f9ULL));
  return s;
}

// Thin deterministic RNG. Distribution helpers are implemented by hand so
// results do not depend on the standard library's distribution internals.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bULL) {}

  uint64_t u64() {
    state_ = mix64(state_ + 0x9e3779b97f4a7c15ULL);
    return state_;
  }

  // uniform in [0, 1)
  double real01() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi]
  double real(double lo, double hi) { return lo + (hi - lo) * real01(); }

  // uniform integer in [lo, hi] inclusive
  int64_t irange(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(u64() % span);
  }

  bool chance(double p) { return real01() < p; }

  float gaussian(float stddev) {
    // Box-Muller; one value per call keeps the stream simple to reason about.
    double u1 = real01();
    double u2 = real01();
    if (u1 < 1e-300) u1 = 1e-300;
    return static_cast<float>(stddev * std::sqrt(-2.0 * std::log(u1)) *
                              std::cos(6.283185307179586 * u2));
  }

private:
  uint64_t state_;
};

}  // namespace refseg
