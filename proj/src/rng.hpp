#pragma once

#include <cstdint>

namespace canmt {

/// Counter-based deterministic random source. Each draw hashes
/// (seed, stream, counter), so a stream's output depends only on its
/// identity and how many values were taken from it, never on what other
/// streams did. split() derives an independent sub-stream; per-item
/// sub-streams make batched work reproducible regardless of batch order.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream), counter_(0) {}

  uint64_t next_u64() {
    uint64_t z = fmix(seed_ + 0x9e3779b97f4a7c15ULL * (counter_++ + 1));
    return fmix(z ^ (stream_ + 0xbf58476d1ce4e5b9ULL));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t next_below(uint64_t n) {
    // Rejection sampling keeps the draw unbiased for every n.
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  /// Uniform integer in [lo, hi], inclusive on both ends.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  /// Independent sub-stream derived from (this stream, key).
  Rng split(uint64_t key) const {
    uint64_t s = fmix(seed_ ^ (0xd1b54a32d192ed03ULL * (key + 1)));
    uint64_t t = fmix(stream_ ^ (0x94d049bb133111ebULL * (key + 1)));
    return Rng(s, t);
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  static uint64_t fmix(uint64_t z) {
    z ^= z >> 33;
    z *= 0xff51afd7ed558ccdULL;
    z ^= z >> 33;
    z *= 0xc4ceb9fe1a85ec53ULL;
    z ^= z >> 33;
    return z;
  }

  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_;
};

}  // namespace canmt
