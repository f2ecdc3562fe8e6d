#pragma once

// Counter-based, splittable random source.
//
// A stream is identified by a 64-bit key. The n-th draw of a stream is
//   mix64(key + n * 0x9E3779B97F4A7C15)      (n = 1, 2, ...)
// where mix64 is the SplitMix64 finalizer. A child stream is
//   split(tag).key = mix64(key ^ mix64(tag)).
// Uniform doubles take the top 53 bits; Gaussians use Box-Muller on two
// consecutive uniforms (cosine branch only). Nothing here depends on the
// standard library's distribution implementations, so streams reproduce
// bit-for-bit on any platform.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace cmcgns {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Combines several integers into one key; order matters.
constexpr std::uint64_t hash_combine(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p + kGoldenGamma));
  return h;
}

class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  constexpr CounterRng split(std::uint64_t tag) const noexcept {
    return CounterRng(mix64(key_ ^ mix64(tag)));
  }

  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGoldenGamma);
  }

  // Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double gaussian() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace cmcgns
