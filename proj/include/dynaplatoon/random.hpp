#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace dynaplatoon {

using Engine = std::mt19937_64;

/// Consumers of randomness. Each gets an independent stream split from the root seed.
enum class Stream : std::uint64_t {
  inflow = 1,
  dawdle = 2,
  exploration = 3,
  weight_init = 4,
  batch_sampling = 5,
  planning_sampling = 6,
  episode = 7,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for (root, stream, index).
constexpr std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(root) ^ static_cast<std::uint64_t>(stream)) ^ index);
}

inline Engine make_engine(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
  return Engine{derive_seed(root, stream, index)};
}

/// Uniform double in [0, 1) from the top 53 bits; independent of the standard library's distributions.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform index in [0, n), n > 0, by rejection of the short tail.
inline std::size_t uniform_index(Engine& rng, std::size_t n) {
  const std::uint64_t bound = n;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return static_cast<std::size_t>(x % bound);
  }
}

}  // namespace dynaplatoon
