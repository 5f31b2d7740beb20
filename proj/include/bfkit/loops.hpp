#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/model.hpp"
#include "bfkit/normalize.hpp"
#include "bfkit/parallel.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

struct LoopCandidate {
  Eigen::Index i{};
  Eigen::Index j{};
  double intensity{};  // blurred O/E value
  bool accepted{};
};

struct PrelocOptions {
  double blur_sigma{1.0};
  double percentile{92.0};
  Eigen::Index neighborhood{5};  // side of the local-maximum window
  Eigen::Index min_diag{3};
};

// Separable Gaussian blur, kernel truncated at 3 sigma and renormalized at the borders.
[[nodiscard]] inline Matrix gaussian_blur(const Matrix &m, double sigma) {
  if (!(sigma > 0.0)) {
    return m;
  }
  const auto radius = static_cast<Eigen::Index>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (Eigen::Index d = -radius; d <= radius; ++d) {
    k[static_cast<std::size_t>(d + radius)] = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
  }
  auto pass = [&](const Matrix &in, bool along_rows) {
    Matrix out(in.rows(), in.cols());
    const auto n = along_rows ? in.cols() : in.rows();
    for (Eigen::Index a = 0; a < in.rows(); ++a) {
      for (Eigen::Index b = 0; b < in.cols(); ++b) {
        const auto at = along_rows ? b : a;
        double s = 0.0;
        double w = 0.0;
        for (auto d = std::max(-radius, -at); d <= std::min(radius, n - 1 - at); ++d) {
          const double kw = k[static_cast<std::size_t>(d + radius)];
          s += kw * (along_rows ? in(a, b + d) : in(a + d, b));
          w += kw;
        }
        out(a, b) = s / w;
      }
    }
    return out;
  };
  return pass(pass(m, true), false);
}

// Linear interpolation between order statistics, finite entries only.
[[nodiscard]] inline double percentile_of(const Matrix &m, double q) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (std::isfinite(m.data()[i])) {
      v.push_back(m.data()[i]);
    }
  }
  if (v.empty()) {
    throw std::invalid_argument("percentile of a map without finite entries");
  }
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Strict local maxima of the blurred map in the upper triangle (j > i).
// Accepted: at or above the percentile threshold and at least min_diag off the diagonal.
[[nodiscard]] inline std::vector<LoopCandidate> preloc_loops(const Matrix &oe, const PrelocOptions &opts = {}) {
  if (oe.size() == 0) {
    throw std::invalid_argument("loop pre-localization on an empty map");
  }
  if (oe.rows() != oe.cols()) {
    throw std::invalid_argument("loop pre-localization needs a square map");
  }
  if (!oe.allFinite()) {
    throw std::invalid_argument("loop pre-localization needs a finite map");
  }
  if (opts.neighborhood < 1) {
    throw std::invalid_argument("neighborhood must be positive");
  }
  const Matrix b = gaussian_blur(oe, opts.blur_sigma);
  const double threshold = percentile_of(b, opts.percentile);
  const auto n = b.rows();
  const auto half = opts.neighborhood / 2;
  std::vector<LoopCandidate> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = b(i, j);
      // ties within rounding are not strict maxima
      const double tol = 1e-9 * std::max(1.0, std::abs(v));
      bool is_max = true;
      for (auto a = std::max<Eigen::Index>(0, i - half); is_max && a <= std::min(n - 1, i + half); ++a) {
        for (auto c = std::max<Eigen::Index>(0, j - half); c <= std::min(n - 1, j + half); ++c) {
          if ((a != i || c != j) && b(a, c) >= v - tol) {
            is_max = false;
            break;
          }
        }
      }
      if (!is_max) {
        continue;
      }
      out.push_back({i, j, v, v >= threshold && j - i >= opts.min_diag});
    }
  }
  return out;
}

struct LoopWindow {
  Eigen::Index row0{}, col0{};
  Matrix values{};
};

// size x size window centred on (i, j), clipped to the map.
[[nodiscard]] inline LoopWindow cut_window(const Matrix &m, Eigen::Index i, Eigen::Index j, Eigen::Index size = 30) {
  auto range = [&](Eigen::Index c, Eigen::Index n) {
    const auto lo = std::clamp<Eigen::Index>(c - size / 2, 0, n);
    const auto hi = std::clamp<Eigen::Index>(c - size / 2 + size, 0, n);
    return std::pair{lo, hi};
  };
  const auto [r0, r1] = range(i, m.rows());
  const auto [c0, c1] = range(j, m.cols());
  return {r0, c0, m.block(r0, c0, r1 - r0, c1 - c0)};
}

namespace detail {

// u for the rows of a window seen as a single trans-block.
template <typename T>
[[nodiscard]] double window_fraction(const Matrix &w, const BlockFormer<T> &model, std::uint64_t resolution) {
  const Genome g{{static_cast<std::uint64_t>(w.rows()) * resolution, static_cast<std::uint64_t>(w.cols()) * resolution},
                 resolution};
  TransRow row{g, 0, {{1, w}}};
  return static_cast<double>(model.predict_normalized(prepare_row(row, model.config())));
}

}  // namespace detail

struct LoopEstimate {
  double x{};  // bp along rows
  double y{};  // bp along columns
};

// Two passes: the window gives the row coordinate, its transpose the column one.
template <typename T>
[[nodiscard]] LoopEstimate localize_loop(const LoopWindow &win, const BlockFormer<T> &model,
                                         std::uint64_t resolution) {
  const auto p = static_cast<Eigen::Index>(model.config().patch_size);
  if (win.values.rows() < p || win.values.cols() < p) {
    throw std::invalid_argument("loop window " + std::to_string(win.values.rows()) + "x" +
                                std::to_string(win.values.cols()) + " is smaller than one " + std::to_string(p) +
                                "x" + std::to_string(p) + " patch");
  }
  const auto r = static_cast<double>(resolution);
  const double ux = detail::window_fraction(win.values, model, resolution);
  const Matrix t = win.values.transpose();
  const double uy = detail::window_fraction(t, model, resolution);
  return {(static_cast<double>(win.row0) + ux * static_cast<double>(win.values.rows())) * r,
          (static_cast<double>(win.col0) + uy * static_cast<double>(win.values.cols())) * r};
}

struct LoopCall {
  LoopCandidate candidate{};
  LoopEstimate estimate{};
};

// O/E, pre-localization, then localization of every accepted candidate.
template <typename T>
[[nodiscard]] std::vector<LoopCall> find_loops(const Matrix &cis, const BlockFormer<T> &model,
                                               std::uint64_t resolution, const PrelocOptions &opts = {},
                                               Eigen::Index window = 30) {
  const Matrix oe = observed_over_expected(cis);
  std::vector<LoopCall> calls;
  for (const auto &c : preloc_loops(oe, opts)) {
    if (c.accepted) {
      calls.push_back({c, {}});
    }
  }
  parallel_for(calls.size(), [&](std::size_t k) {
    const auto &c = calls[k].candidate;
    calls[k].estimate = localize_loop(cut_window(oe, c.i, c.j, window), model, resolution);
  });
  return calls;
}

struct LoopMapSpec {
  Eigen::Index bins{200};
  double amplitude{5.0};   // loop peak over the local background
  double sigma2{2.0};      // bins^2
  double noise{0.0};       // multiplicative Gaussian noise level
  Eigen::Index min_sep{10};
  Eigen::Index margin{5};
};

struct LoopMap {
  Matrix values{};
  double i{};  // planted loop, bins
  double j{};
};

// Symmetric cis map: 1/(1+|i-j|) background plus one off-diagonal Gaussian loop.
[[nodiscard]] inline LoopMap synthetic_loop_map(const LoopMapSpec &spec, std::uint64_t seed) {
  if (spec.bins < 2 * spec.margin + spec.min_sep + 2) {
    throw std::invalid_argument("loop map too small for its margins");
  }
  auto rng = make_engine(seed, {0});
  const auto n = spec.bins;
  const auto hi = static_cast<double>(n - 1 - spec.margin);
  const auto lo = static_cast<double>(spec.margin);
  double i = 0.0;
  double j = 0.0;
  do {
    i = uniform(rng, lo, hi);
    j = uniform(rng, lo, hi);
  } while (std::abs(i - j) < static_cast<double>(spec.min_sep));
  if (i > j) {
    std::swap(i, j);
  }
  Matrix m(n, n);
  std::normal_distribution<double> z;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      const double bg = 1.0 / (1.0 + static_cast<double>(b - a));
      const double da = static_cast<double>(a) - i;
      const double db = static_cast<double>(b) - j;
      double v = bg * (1.0 + spec.amplitude * std::exp(-0.5 * (da * da + db * db) / spec.sigma2));
      if (spec.noise > 0.0) {
        v *= std::max(0.0, 1.0 + spec.noise * z(rng));
      }
      m(a, b) = v;
      m(b, a) = v;
    }
  }
  return {std::move(m), i, j};
}

}  // namespace bfkit
