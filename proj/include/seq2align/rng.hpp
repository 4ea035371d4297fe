#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace seq2align {

/// splitmix64 finalizer; used to expand seeds and to mix hashes.
std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** generator (Blackman & Vigna). State is seeded from a single
/// 64-bit value through splitmix64, so a seed fully determines the stream on
/// every platform. Distribution helpers are implemented here rather than via
/// <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform integer in [lo, hi] (inclusive).
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi);

 private:
  std::uint64_t s_[4];
};

/// Stream seed for one purpose of a run: FNV-1a over (master seed as 8
/// little-endian bytes, purpose bytes), then a splitmix64 finalization.
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose);

/// Same as above with a shuffle fraction mixed in as round(fraction * 1e6)
/// (8 little-endian bytes) after the purpose string.
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, double fraction);

/// FNV-1a 64-bit hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// In-place Fisher-Yates shuffle.
template <typename T>
void fisher_yates(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace seq2align
