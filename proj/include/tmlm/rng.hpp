#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>

namespace tmlm {

/// SplitMix64 step; used to expand a 64-bit seed into generator state.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a base seed and a stream index
/// (e.g. a token position).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// xoshiro256** 1.0 (Blackman & Vigna), state filled by SplitMix64 from the
/// seed. All randomness in the engine goes through this generator so runs are
/// reproducible from the seed alone, independent of the standard library.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform integer in [0, bound) by rejection sampling (no modulo bias).
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform();

  /// Standard normal via Box-Muller; consumes two draws per call and returns
  /// the cosine branch.
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// Fisher-Yates: for i = n-1 down to 1, swap v[i] with v[below(i+1)].
template <typename T>
void fisher_yates(std::span<T> v, Xoshiro256& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace tmlm
