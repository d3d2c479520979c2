#pragma once

/**
 * Seeded 64-bit mixing utilities.
 *
 * Everything random-looking in the synthetic environment (golden path,
 * confidences, termination draws, token ids, cache cells) is a pure
 * function of a seed and a tree path, built from the SplitMix64
 * finalizer below. No RNG state is carried anywhere, which is what makes
 * batch composition irrelevant to per-row outputs.
 */

#include <cstdint>
#include <span>

namespace dpts {

// SplitMix64 finalizer: full-avalanche 64-bit mixer.
constexpr std::uint64_t avalanche64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Feed one value into a running hash.
constexpr std::uint64_t mix64(std::uint64_t h, std::uint64_t v) {
  return avalanche64(h ^ (v * 0xd6e8feb86659fd93ull + 0x2545f4914f6cdd1dull));
}

// Fold a path of child indices into a hash, order-sensitive.
inline std::uint64_t hash_path(std::uint64_t h, std::span<const int> path) {
  for (int step : path) {
    h = mix64(h, static_cast<std::uint64_t>(step) + 1);
  }
  return h;
}

// Map a hash to [0, 1). Uses the top 53 bits.
constexpr double unit_interval(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace dpts
