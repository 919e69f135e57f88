#pragma once

#include <cstdint>

namespace loclesion {

// splitmix64-v1
//
// The generator identity is part of the fixture contract: seeded stimulus
// sets, random unit masks and toy-model weights all derive from this exact
// sequence. Changing anything here invalidates pinned test fixtures.
//
//   next():    state += 0x9E3779B97F4A7C15, then the standard splitmix64 mix
//   split():   child generator seeded with one next() draw of the parent
//   below(n):  rejection sampling; draws x until x >= (2^64 - n) mod n,
//              returns x mod n (exactly uniform on [0, n))
//   unit():    top 24 bits of next() scaled to [0, 1)
class SplitMix64 {
 public:
  static constexpr const char* kName = "splitmix64-v1";

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  constexpr SplitMix64 split() noexcept { return SplitMix64(next()); }

  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }

  constexpr float unit() noexcept {
    return static_cast<float>(next() >> 40) * (1.0f / 16777216.0f);
  }

 private:
  std::uint64_t state_;
};

}  // namespace loclesion
