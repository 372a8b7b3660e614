#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace altune {

/// splitmix64 finalizer; used to derive independent RNG streams from a seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a, stable across platforms (std::hash is not).
constexpr std::uint64_t hash_id(std::string_view id) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : id) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Stream tags so that unrelated consumers of one seed never share a sequence.
enum class Stream : std::uint64_t {
  kSynthMeans = 1,
  kSynthNoise,
  kSynthFlip,
  kSynthOrder,
  kSplitFolds,
  kSplitValidation,
  kEncoderInit,
  kCodebookInit,
  kHeadInit,
  kTaptShuffle,
  kTaptMask,
  kInitSelection,
  kKmeans,
  kFineTune,
  kAcquisition,
  kCommittee,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t sub = 0) {
  return std::mt19937_64(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(stream)), sub));
}

}  // namespace altune
