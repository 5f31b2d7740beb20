#pragma once

// Hand-rolled property generators. Every case draws from its own stream so a
// failing case can be replayed from (seed, index) alone.

#include <gtest/gtest.h>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/rng.hpp"
#include "bfkit/kernels.hpp"

namespace bfkit::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : _rng(seed) {}

  [[nodiscard]] double real(double lo, double hi) { return uniform(_rng, lo, hi); }
  [[nodiscard]] std::int64_t integer(std::int64_t lo, std::int64_t hi) { return uniform_int(_rng, lo, hi); }
  [[nodiscard]] std::size_t index(std::size_t n) { return static_cast<std::size_t>(integer(0, static_cast<std::int64_t>(n) - 1)); }
  [[nodiscard]] bool coin() { return integer(0, 1) == 1; }
  [[nodiscard]] std::uint64_t seed() { return _rng(); }
  [[nodiscard]] Engine &engine() { return _rng; }

  [[nodiscard]] Matrix matrix(Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = real(lo, hi);
    }
    return m;
  }

  template <typename T>
  [[nodiscard]] Mat<T> mat(Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    return matrix(r, c, lo, hi).cast<T>();
  }

  [[nodiscard]] Matrix symmetric_positive(Eigen::Index n, double lo = 0.1, double hi = 10.0) {
    Matrix m = matrix(n, n, lo, hi);
    return 0.5 * (m + m.transpose());
  }

  // Genome with `count` chromosomes of [min_bins, max_bins] bins at resolution r
  // (min_bins >= 3 so every length stays at or above two full bins).
  [[nodiscard]] Genome genome(std::size_t count, std::size_t min_bins, std::size_t max_bins,
                              std::uint64_t r = 32'000) {
    if (min_bins < 3) {
      throw std::invalid_argument("generator genome needs min_bins >= 3");
    }
    std::vector<std::uint64_t> lengths(count);
    for (auto &l : lengths) {
      const auto bins = static_cast<std::uint64_t>(integer(static_cast<std::int64_t>(min_bins),
                                                           static_cast<std::int64_t>(max_bins)));
      // anywhere inside the last bin
      l = (bins - 1) * r + static_cast<std::uint64_t>(integer(1, static_cast<std::int64_t>(r)));
    }
    return Genome{std::move(lengths), r};
  }

 private:
  Engine _rng;
};

// Runs `prop(gen, case_index)` for n cases; failures name the case for replay.
template <typename F>
void for_all(std::size_t n, std::uint64_t seed, F &&prop) {
  for (std::size_t i = 0; i < n; ++i) {
    Gen g{derive_seed(seed, {i})};
    SCOPED_TRACE("property case " + std::to_string(i) + " (seed " + std::to_string(seed) + ")");
    prop(g, i);
    if (::testing::Test::HasFatalFailure()) {
      return;
    }
  }
}

}  // namespace bfkit::testing
