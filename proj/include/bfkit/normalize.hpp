#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

struct IceResult {
  ContactMap map{};
  std::vector<double> bias{};
  std::vector<bool> filtered{};
  int iterations{};
  bool converged{};
  double spread{};  // max relative deviation of row sums from their mean
};

inline constexpr double ice_filter_threshold = 1e-12;

// Symmetric Sinkhorn balancing, b <- b / sqrt(b .* (A b)). Rows whose sum is
// below ice_filter_threshold are excluded and stay zero. Converged rows sum to 1.
[[nodiscard]] inline IceResult ice_balance(const ContactMap &map, int max_iters = 200, double tol = 1e-10) {
  const auto &a = map.values;
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("ICE requires a square matrix, got " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()));
  }
  if (a.size() > 0 && a.minCoeff() < 0.0) {
    throw std::invalid_argument("ICE requires nonnegative entries");
  }
  const auto n = a.rows();
  IceResult res{};
  res.filtered.assign(static_cast<std::size_t>(n), false);
  Eigen::VectorXd bias = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd raw_sums = a.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (raw_sums(i) < ice_filter_threshold) {
      res.filtered[static_cast<std::size_t>(i)] = true;
      bias(i) = 0.0;
    }
  }

  auto spread_of = [&](const Eigen::VectorXd &sums) {
    double mean = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!res.filtered[static_cast<std::size_t>(i)]) {
        mean += sums(i);
        ++count;
      }
    }
    if (count == 0) {
      return 0.0;
    }
    mean /= static_cast<double>(count);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!res.filtered[static_cast<std::size_t>(i)]) {
        worst = std::max(worst, std::abs(sums(i) - mean) / mean);
      }
    }
    return worst;
  };

  Eigen::VectorXd sums = bias.cwiseProduct(a * bias);
  res.spread = spread_of(sums);
  int it = 0;
  while (it < max_iters && (res.spread >= tol || std::abs(sums.maxCoeff() - 1.0) >= tol)) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!res.filtered[static_cast<std::size_t>(i)]) {
        bias(i) /= std::sqrt(sums(i));
      }
    }
    sums = bias.cwiseProduct(a * bias);
    res.spread = spread_of(sums);
    ++it;
  }
  res.iterations = it;
  res.converged = res.spread < tol;
  Matrix out = bias.asDiagonal() * a * bias.asDiagonal();
  // exact symmetry
  out = (0.5 * (out + out.transpose())).eval();
  res.map = ContactMap{map.genome, std::move(out)};
  res.bias.assign(bias.data(), bias.data() + n);
  return res;
}

[[nodiscard]] inline ContactMap ice_normalize(const ContactMap &map, int max_iters = 200, double tol = 1e-10) {
  return ice_balance(map, max_iters, tol).map;
}

// Min-max scaling to [0, 1]; constant input maps to zeros.
template <typename Derived>
[[nodiscard]] Matrix normalize_01(const Eigen::MatrixBase<Derived> &m) {
  if (m.size() == 0) {
    throw std::invalid_argument("cannot normalize an empty matrix");
  }
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  if (!(hi > lo)) {
    return Matrix::Zero(m.rows(), m.cols());
  }
  return ((m.derived().array() - lo) / (hi - lo)).matrix();
}

[[nodiscard]] inline TransRow normalize_01(const TransRow &row) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto &b : row.blocks) {
    if (b.values.size() > 0) {
      lo = std::min(lo, b.values.minCoeff());
      hi = std::max(hi, b.values.maxCoeff());
      any = true;
    }
  }
  if (!any) {
    throw std::invalid_argument("cannot normalize an empty row");
  }
  TransRow out{row.genome, row.target, {}};
  out.blocks.reserve(row.blocks.size());
  for (const auto &b : row.blocks) {
    if (hi > lo) {
      out.blocks.push_back({b.source, ((b.values.array() - lo) / (hi - lo)).matrix()});
    } else {
      out.blocks.push_back({b.source, Matrix::Zero(b.values.rows(), b.values.cols())});
    }
  }
  return out;
}

// Zero-pads every block on the right and bottom to a multiple of `patch`.
[[nodiscard]] inline TransRow pad_blocks(const TransRow &row, std::size_t patch) {
  TransRow out{row.genome, row.target, {}};
  out.blocks.reserve(row.blocks.size());
  const auto p = static_cast<Eigen::Index>(patch);
  for (const auto &b : row.blocks) {
    const auto r = (b.values.rows() + p - 1) / p * p;
    const auto c = (b.values.cols() + p - 1) / p * p;
    Matrix m = Matrix::Zero(r, c);
    m.topLeftCorner(b.values.rows(), b.values.cols()) = b.values;
    out.blocks.push_back({b.source, std::move(m)});
  }
  return out;
}

// E[i][j] is the mean of the diagonal |i - j|; OE = C / E with 0 where E == 0.
template <typename Derived>
[[nodiscard]] Matrix observed_over_expected(const Eigen::MatrixBase<Derived> &c) {
  if (c.rows() != c.cols()) {
    throw std::invalid_argument("observed/expected requires a square block, got " + std::to_string(c.rows()) +
                                "x" + std::to_string(c.cols()));
  }
  const auto n = c.rows();
  std::vector<double> expected(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index d = 0; d < n; ++d) {
    double s = 0.0;
    for (Eigen::Index i = 0; i + d < n; ++i) {
      s += c(i, i + d);
      if (d > 0) {
        s += c(i + d, i);
      }
    }
    const auto count = static_cast<double>(d == 0 ? n : 2 * (n - d));
    expected[static_cast<std::size_t>(d)] = s / count;
  }
  Matrix oe(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double e = expected[static_cast<std::size_t>(std::abs(i - j))];
      oe(i, j) = e != 0.0 ? c(i, j) / e : 0.0;
    }
  }
  return oe;
}

enum class Aggregation { sum, mean };

// Coarsens every block by k, aggregating k x k neighborhoods; ragged edges
// aggregate partial neighborhoods.
[[nodiscard]] inline ContactMap downsample(const ContactMap &map, std::size_t k, Aggregation agg = Aggregation::sum) {
  if (k < 1) {
    throw std::invalid_argument("downsampling factor must be >= 1");
  }
  if (k == 1) {
    return map;
  }
  const auto &g = map.genome;
  Genome coarse = g.with_resolution(g.resolution() * k);
  std::vector<Eigen::Index> cidx(g.total_bins());
  std::vector<double> group_size(coarse.total_bins(), 0.0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    for (std::size_t a = 0; a < g.bins(c); ++a) {
      const auto ci = coarse.offset(c) + a / k;
      cidx[g.offset(c) + a] = static_cast<Eigen::Index>(ci);
      group_size[ci] += 1.0;
    }
  }
  ContactMap out{coarse};
  const auto n = map.values.rows();
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto ca = cidx[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < n; ++b) {
      out.values(ca, cidx[static_cast<std::size_t>(b)]) += map.values(a, b);
    }
  }
  if (agg == Aggregation::mean) {
    for (Eigen::Index a = 0; a < out.values.rows(); ++a) {
      for (Eigen::Index b = 0; b < out.values.cols(); ++b) {
        out.values(a, b) /= group_size[static_cast<std::size_t>(a)] * group_size[static_cast<std::size_t>(b)];
      }
    }
  }
  return out;
}

// Binomial thinning of rounded counts, upper triangle mirrored.
[[nodiscard]] inline ContactMap depth_subsample(const ContactMap &map, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw std::invalid_argument("depth fraction must lie in (0, 1], got " + std::to_string(p));
  }
  if (p == 1.0) {
    return map;
  }
  ContactMap out{map.genome};
  Engine rng{seed};
  const auto n = map.values.rows();
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      const double c = std::round(map.values(a, b));
      if (c < 0.0) {
        throw std::invalid_argument("negative count at (" + std::to_string(a) + ", " + std::to_string(b) + ")");
      }
      double v = 0.0;
      if (c > 0.0) {
        std::binomial_distribution<std::int64_t> dist(static_cast<std::int64_t>(c), p);
        v = static_cast<double>(dist(rng));
      }
      out.values(a, b) = v;
      out.values(b, a) = v;
    }
  }
  return out;
}

// Zeroes the outer `width` rows and columns of every trans-block (telomere guard).
[[nodiscard]] inline ContactMap zero_block_borders(const ContactMap &map, std::size_t width = 1) {
  ContactMap out = map;
  const auto &g = map.genome;
  const auto w = static_cast<Eigen::Index>(width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (i == j) {
        continue;
      }
      auto blk = out.block(i, j);
      const auto r = blk.rows();
      const auto c = blk.cols();
      blk.topRows(std::min(w, r)).setZero();
      blk.bottomRows(std::min(w, r)).setZero();
      blk.leftCols(std::min(w, c)).setZero();
      blk.rightCols(std::min(w, c)).setZero();
    }
  }
  return out;
}

}  // namespace bfkit
