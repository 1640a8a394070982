#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace anatcl {

// Deterministic xoshiro256** generator.
//
// Seeding: the 256-bit state is produced by four successive outputs of a
// splitmix64 chain. The chain starts at
//
//   x0 = seed
//   x_{n+1} = splitmix64_next(x_n ^ (path_n + 0x9E3779B97F4A7C15))
//
// folding in each element of the stream path (e.g. {kind, epoch, patient,
// anatomy}) in order. Identical (seed, path, call sequence) therefore yields
// the identical draw sequence on every platform: the generator itself is pure
// 64-bit integer arithmetic. Floating-point helpers (uniform, normal) map
// those integers through ldexp / Box-Muller; the Gaussian path goes through
// libm and is exact only per libm implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, {}) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path);
  Rng(std::uint64_t seed, const std::vector<std::uint64_t>& path);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Uniform in [lo, hi).
  double uniform_in(double lo, double hi);

  // Unbiased uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);

  // Standard normal via Box-Muller; consumes two uniforms per pair and
  // caches the second sample.
  double normal();

  // In-place Fisher-Yates: for i = n-1 .. 1, j = uniform_below(i + 1),
  // swap(items[i], items[j]).
  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      const std::size_t j =
          static_cast<std::size_t>(uniform_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace anatcl
