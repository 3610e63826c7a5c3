#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace aalr {

// splitmix64 finalizer; used for sub-seeding and branch-state signatures.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Code for one discrete branch (ReLU sign, hinge activity, clamp, argmax
// choice). Codes are summed with wraparound, so a signature is
// order-independent yet changes when any single branch flips. site/salt/slot
// keep distinct branch sites in disjoint input ranges.
inline std::uint64_t sig_code(std::uint64_t site, std::uint64_t salt, std::uint64_t slot) {
  return mix64((site << 56) ^ (salt << 40) ^ slot);
}

// splitmix64 stream (Steele/Lea/Flood). Pure integer arithmetic, so a given
// seed produces the identical stream on every platform. All derived draws
// (uniform doubles, Box-Muller normals, shuffles) are fully specified here
// rather than delegated to <random> distributions, whose sequences are
// implementation-defined.
struct Rng {
  std::uint64_t state = 0;

  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit mantissa
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // modulo bias is negligible at the ranges used here
  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Box-Muller; consumes two draws per call, no cached spare.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }
};

}  // namespace aalr
