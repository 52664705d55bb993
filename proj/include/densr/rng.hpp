#pragma once

#include <cmath>
#include <cstdint>

namespace densr {

/// PCG32: small deterministic generator with an explicitly serializable
/// 128-bit state. Used everywhere instead of <random> engines so that
/// synthesis and training are byte-reproducible across standard libraries.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0x853c49e6748fea9bull, 0xda3e39cb94b95bdbull) {}
  Pcg32(std::uint64_t seed, std::uint64_t stream) { reseed(seed, stream); }

  void reseed(std::uint64_t seed, std::uint64_t stream = 0) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += splitmix64(seed);
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    std::uint64_t hi = next_u32(), lo = next_u32();
    return static_cast<double>(((hi << 32) | lo) >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::uint32_t below(std::uint32_t n) { return static_cast<std::uint32_t>(uniform() * n); }

  /// Box-Muller without spare caching, so the generator state is the whole
  /// RNG state.
  double gaussian() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t inc() const { return inc_; }
  void set_state(std::uint64_t state, std::uint64_t inc) {
    state_ = state;
    inc_ = inc;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t state_ = 0, inc_ = 1;
};

}  // namespace densr
