#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace d2d {

// Deterministic 64-bit generator. All randomness in the library flows through
// explicitly seeded instances of this type.
using Rng = std::mt19937_64;

// SplitMix64 finaliser; derives independent child seeds from (seed, stream).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double standard_normal(Rng& rng) {
  // Marsaglia polar method; avoids depending on the standard library's
  // unspecified normal_distribution algorithm.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    const double a = u(rng);
    const double b = u(rng);
    const double s = a * a + b * b;
    if (s > 0.0 && s < 1.0) {
      return a * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace d2d
