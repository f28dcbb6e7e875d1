#pragma once

#include <cstdint>
#include <random>

namespace sonarmatch {

// All randomness derives from one user seed. Each consumer gets its own
// stream: derive_seed(seed, stream) and, for indexed sub-streams (epochs,
// batches, MC passes), derive_seed(derive_seed(seed, stream), index).
namespace streams {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kSearch = 5;
inline constexpr std::uint64_t kMcDropout = 6;
inline constexpr std::uint64_t kSynthetic = 7;
inline constexpr std::uint64_t kTrial = 8;
}  // namespace streams

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) noexcept {
  return splitmix64(parent ^ splitmix64(stream));
}

/// Uniform double in [0,1) from a 64-bit hash value (top 53 bits).
constexpr double hash_to_unit(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

using Rng = std::mt19937_64;

}  // namespace sonarmatch
