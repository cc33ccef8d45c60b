#pragma once

#include <cstdint>
#include <string_view>

namespace spslu {

/// SplitMix64: 64-bit state advanced by a Weyl increment, output mixed by
/// xor-shift/multiply rounds. The stream is fully determined by the seed and
/// identical on every platform.
///
/// Consumers draw from separate named streams (see `Prng::stream`):
///   "init"    parameter initialization, tensors in declaration order
///   "shuffle" one Fisher-Yates permutation of the training split per epoch
///   "dropout" one uniform per element of every dropout mask, in op order
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : state_(seed), seed_(seed) {}

  static Prng stream(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    Prng mixer(seed ^ h);
    return Prng(mixer.next_u64());
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  std::uint64_t seed_;
};

}  // namespace spslu
