#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>

namespace popgrid {

// Normative seeded stream: the seed is expanded with splitmix64 into the four
// 64-bit words of a xoshiro256** state. Every stochastic stage of the pipeline
// draws from this generator so runs are reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  // Unbiased integer in [0, bound) by rejection. bound must be nonzero.
  std::uint64_t bounded(std::uint64_t bound);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();

  const std::array<std::uint64_t, 4>& state() const { return s_; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64_next(std::uint64_t& state);

// Fisher-Yates from the last index downward.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  if (items.size() < 2) return;
  for (std::size_t i = items.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.bounded(i + 1));
    std::swap(items[i], items[j]);
  }
}

// Derives an independent stream seed for a named sub-purpose of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace popgrid
