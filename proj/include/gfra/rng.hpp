#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "gfra/types.hpp"

namespace gfra {

// All randomness goes through mt19937_64. Independent sub-streams are derived
// from a master seed and a purpose tag with SplitMix64, so the pool, the
// realization and the noise of a trial can be regenerated separately.
inline constexpr std::string_view kRngAlgorithm = "mt19937_64+splitmix64";

enum class Stream : std::uint64_t {
  kPool = 1,
  kRealization = 2,
  kNoise = 3,
  kDataset = 4,
  kTraining = 5,
  kTheory = 6,
  kTrial = 7,
};

std::uint64_t splitmix64(std::uint64_t x);

// Seed for sub-stream `stream` of `master`, optionally indexed (trial number,
// pair number, ...).
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  // Circularly-symmetric CN(0, 1).
  Complex complex_normal();
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// FNV-1a over raw bytes; used for content hashes in file headers.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 14695981039346656037ULL);
std::uint64_t hash_matrix(const CMatrix& m);

}  // namespace gfra
