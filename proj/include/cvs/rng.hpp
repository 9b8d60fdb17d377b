#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cvs {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the stream named `tag` under `root`, optionally indexed (epoch, sample, ...).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  return mix64(mix64(mix64(root ^ hash_tag(tag)) + a) + b);
}

inline Rng make_rng(std::uint64_t root, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(root, tag, a, b));
}

/// Uniform double in [0, 1) built from raw engine bits so results do not depend on the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

double standard_normal(Rng& rng);

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace cvs
