#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "xicl/errors.hpp"

namespace xicl {

// Deterministic source of randomness. mt19937_64 output is fully specified
// by the standard, so identical seeds give identical streams on every
// platform. Bounded draws use rejection sampling instead of
// std::uniform_int_distribution, whose mapping is implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Unbiased draw from [0, n).
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw ValidationError("bounded draw from empty range");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// k distinct indices from [0, n), in selection order (partial
/// Fisher-Yates). Same (n, k, seed) gives the same sequence everywhere.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                               std::uint64_t seed) {
  if (k > n)
    throw ValidationError("sample of " + std::to_string(k) +
                          " from population of " + std::to_string(n));
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  SeededRng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.bounded(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace xicl
