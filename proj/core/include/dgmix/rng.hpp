#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "dgmix/errors.hpp"
#include "dgmix/hash.hpp"

namespace dgmix {

/// splitmix64 step; used for seeding and for deriving independent substreams.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Substream seed for (seed, tag); distinct tags give independent streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix_seed(seed ^ mix_seed(tag + 0x5851f42d4c957f2dULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return derive_seed(seed, fnv1a64(tag));
}

/// xoshiro256** generator with portable uniform/shuffle helpers. All randomness
/// in the project flows through this type so that runs are reproducible bitwise
/// from their seeds, independent of the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x = mix_seed(x);
      s = x;
    }
  }

  std::uint64_t next() {
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

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace dgmix
