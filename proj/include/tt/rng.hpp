// Counter-based random number streams.
//
// Every draw is a pure function of (seed, counter), so a stream can be copied,
// replayed, or split into labeled sub-streams without perturbing its siblings.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace tt {

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  // Independent stream keyed by a label; the parent's counter is untouched.
  [[nodiscard]] Rng substream(std::string_view label) const {
    return Rng(detail::mix64(seed_ ^ detail::mix64(detail::fnv1a(label))));
  }
  [[nodiscard]] Rng substream(std::uint64_t index) const {
    return Rng(detail::mix64(seed_ + detail::mix64(index + 0x632be59bd9b4e019ULL)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t z = seed_ + (++counter_) * 0x9e3779b97f4a7c15ULL;
    return detail::mix64(detail::mix64(z) ^ seed_);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    const std::uint64_t span = hi - lo + 1;
    if (span == 0) return next_u64();  // full 64-bit range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return lo + r % span;
  }

  // Standard normal by Box-Muller; consumes two draws, caches nothing.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace tt
