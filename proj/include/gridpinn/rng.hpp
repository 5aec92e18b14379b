// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random numbers: SplitMix64 evaluated at (key, counter).
// Draw k of stream s under seed S is
//   mix64(key(S, s) + (k + 1) * 0x9E3779B97F4A7C15),
//   key(S, s) = mix64(S ^ mix64(s + 0xD1B54A32D192ED03)),
// and a double in [0, 1) takes the top 53 bits. The definition is fixed so
// that seeds reproduce across builds and platforms.

#pragma once

#include <cstdint>

namespace gridpinn {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix64(seed ^ mix64(stream + 0xD1B54A32D192ED03ULL))) {}

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Named stream identifiers so independent consumers never share draws.
namespace streams {
inline constexpr std::uint64_t kTrainIcs = 1;
inline constexpr std::uint64_t kTestIcs = 2;
inline constexpr std::uint64_t kCollocation = 3;
inline constexpr std::uint64_t kMainNet = 10;
inline constexpr std::uint64_t kAuxIcNet = 11;
inline constexpr std::uint64_t kAuxOdeNet = 12;
inline constexpr std::uint64_t kStepNet = 13;
inline constexpr std::uint64_t kStepIcs = 14;
inline constexpr std::uint64_t kHessianProbe = 20;
}  // namespace streams

}  // namespace gridpinn
