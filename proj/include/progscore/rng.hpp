#pragma once

#include <cmath>
#include <cstdint>

namespace progscore {

/// Counter-based 64-bit PRNG built on the SplitMix64 finalizer.
///
/// Stream semantics (normative, relied on by tests with frozen values):
///   - A stream is a 64-bit key plus a draw counter starting at 0.
///   - Draw i (1-based) of stream k is  mix64(k + i * PHI), PHI = 0x9E3779B97F4A7C15.
///   - Rng::seeded(seed) opens the root stream with key mix64(seed + PHI).
///   - stream(j) derives child key mix64(key ^ mix64(j + PHI)); derivation
///     does not touch the parent counter, so substreams are independent of
///     draw order and safe to hand to parallel workers.
///   - next_double() maps the top 53 bits to [0, 1).
///   - next_below(n) is the multiply-shift map floor(u64 * n / 2^64).
///   - next_normal() consumes exactly two uniforms (Box-Muller, cosine branch).
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static Rng seeded(std::uint64_t seed) { return Rng(mix64(seed + kPhi)); }

  Rng stream(std::uint64_t index) const { return Rng(mix64(key_ ^ mix64(index + kPhi))); }

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kPhi); }

  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  std::uint64_t next_below(std::uint64_t n) {
    using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * n) >> 64);
  }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double next_normal() {
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  std::uint64_t key() const { return key_; }

 private:
  static constexpr std::uint64_t kPhi = 0x9E3779B97F4A7C15ull;
  static constexpr double kTwoPi = 6.283185307179586476925286766559;

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace progscore
