#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bernnet/numcore.hpp"

namespace bernnet {

/// xoshiro256** seeded through splitmix64. Uses only integer arithmetic for
/// the raw stream, so a seed produces the same stream on every platform.
/// Normal variates use Box–Muller on top of that stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x5eed);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1), 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer in [0, bound), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t bound) noexcept;
  double normal(double mean = 0.0, double stddev = 1.0) noexcept;

  /// Derives an independent generator, e.g. one per layer or per run.
  Rng split() noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

Matrix rng_normal(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev);
Matrix rng_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

}  // namespace bernnet
