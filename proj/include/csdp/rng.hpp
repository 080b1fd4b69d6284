#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace csdp {

// Splitmix64 finalizer. Used to derive independent stream seeds from a base
// seed plus structural tags (epoch, series index, ...), so results do not
// depend on the order in which streams are consumed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(base ^ 0x243f6a8885a308d3ULL);
  s = mix64(s ^ a);
  s = mix64(s ^ b);
  return mix64(s ^ c);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

/// Bounded draw and Fisher-Yates shuffle built directly on the raw generator
/// output, so sequences are identical across standard libraries (the std
/// distributions leave their algorithm implementation-defined).
inline std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t n) {
  return n <= 1 ? 0 : rng() % n;
}

template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[draw_below(rng, i)]);
}

/// Uniform in [0, 1) with full 53-bit mantissa resolution.
inline double draw_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on raw uniform bits (same portability
/// rationale as draw_below).
inline double draw_gaussian(std::mt19937_64& rng) {
  double u1 = 1.0 - draw_unit(rng);  // (0, 1]: keeps the log finite
  double u2 = draw_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace csdp
