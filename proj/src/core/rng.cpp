#include "core/rng.hpp"

#include <cmath>

#include "core/error.hpp"

namespace anatcl {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64_next(std::uint64_t& x) {
  x += kGolden;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
    : Rng(seed, std::vector<std::uint64_t>(path)) {}

Rng::Rng(std::uint64_t seed, const std::vector<std::uint64_t>& path) {
  std::uint64_t x = seed;
  for (std::uint64_t p : path) {
    std::uint64_t t = x ^ (p + kGolden);
    x = splitmix64_next(t);
  }
  for (auto& s : state_) s = splitmix64_next(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return std::ldexp(static_cast<double>(next_u64() >> 11), -53);
}

double Rng::uniform_in(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw InvalidArgument("uniform_below: zero bound");
  // Rejection sampling over the largest multiple of bound.
  const std::uint64_t limit = bound * (~0ULL / bound);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 =
      std::ldexp(static_cast<double>((next_u64() >> 11) + 1), -53);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

}  // namespace anatcl
