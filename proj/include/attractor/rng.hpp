#pragma once

// Seeded randomness. The engine is std::mt19937_64 (fully specified by the
// standard), but every distribution is drawn with our own arithmetic so the
// exact sample sequence does not depend on the standard library version.

#include <cmath>
#include <cstdint>
#include <random>

namespace attractor {

class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased via rejection.
  uint64_t below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  bool coin() { return (engine_() & 1u) != 0; }

  // Standard normal via Box-Muller; one value per call (the pair's twin is
  // discarded to keep the draw count predictable).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derive an independent stream, e.g. one per trial index.
  Rng fork(uint64_t salt) const {
    std::mt19937_64 copy = engine_;
    uint64_t a = copy();
    uint64_t b = copy();
    // splitmix64 finalizer over (a ^ rotated salt, b).
    uint64_t z = a ^ (salt + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z = z ^ (z >> 31) ^ b;
    return Rng(z);
  }

  std::mt19937_64& engine() { return engine_; }
  const std::mt19937_64& engine() const { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates shuffle of indices [0, n); explicit so the permutation is
// engine-defined, not stdlib-defined.
template <typename T>
void shuffle_indices(std::vector<T>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace attractor
