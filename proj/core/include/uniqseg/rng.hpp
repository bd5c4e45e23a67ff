// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace uniqseg {

/// Deterministic PCG32 generator with an explicitly serializable state.
/// Used everywhere instead of <random> engines/distributions so that
/// results are identical across platforms and standard libraries.
class Rng {
 public:
  Rng() : Rng(0x853c49e6748fea9bULL) {}

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += splitmix64(seed);
    next_u32();
  }

  /// Independent generator for a named sub-purpose of the same seed.
  static Rng derive(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    return Rng(seed, h | 1u);
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, n). n must be > 0. Unbiased via rejection.
  std::uint32_t uniform_u32(std::uint32_t n) {
    std::uint32_t threshold = (-n) % n;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(uniform_u32(static_cast<std::uint32_t>(hi - lo + 1)));
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u32()) * 0x1.0p-32; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached spare; state-free variant).
  double normal() {
    double u1 = 1.0 - uniform();  // avoid log(0)
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t stream() const { return inc_; }
  void restore(std::uint64_t state, std::uint64_t stream) {
    state_ = state;
    inc_ = stream;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

}  // namespace uniqseg
