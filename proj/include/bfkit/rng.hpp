#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bfkit {

using Engine = std::mt19937_64;

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31U);
}

// Derives an independent stream seed from a base seed and a path of indices,
// e.g. derive_seed(seed, round, particle).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base,
                                                  std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = splitmix64(base);
  for (const auto p : path) {
    h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  }
  return h;
}

[[nodiscard]] inline Engine make_engine(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  return Engine{derive_seed(base, path)};
}

[[nodiscard]] inline double uniform(Engine &rng, double lo, double hi) {
  return std::uniform_real_distribution<double>{lo, hi}(rng);
}

[[nodiscard]] inline std::int64_t uniform_int(Engine &rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>{lo, hi}(rng);
}

}  // namespace bfkit
