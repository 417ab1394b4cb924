#pragma once

#include <cstdint>

namespace tseg {

// Counter-based, splittable pseudo-random generator.
//
// The generator is a pure function of (key, counter): draw i of a stream with
// key k is mix64(k + (i+1) * 0x9E3779B97F4A7C15), where mix64 is the SplitMix64
// finalizer. Child streams derive a new key as mix64(k ^ mix64(stream + 1)).
// Everything is 64-bit integer arithmetic, so sequences are identical across
// platforms and independent of how many draws other streams have made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  // Uniform in [0, 1), 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Uniform in [0, n). Modulo bias is negligible for the n used here
  // (shuffles and index picks, n << 2^32).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Independent child stream; unaffected by this stream's counter.
  Rng split(std::uint64_t stream) const {
    return Rng(mix64(key_ ^ mix64(stream + 1)));
  }

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace tseg
