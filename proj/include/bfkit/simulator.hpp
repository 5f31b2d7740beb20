#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/normalize.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

enum class SpotShape { gaussian, square, ellipse, ring };

[[nodiscard]] inline SpotShape parse_spot_shape(const std::string &s) {
  if (s == "gaussian") return SpotShape::gaussian;
  if (s == "square") return SpotShape::square;
  if (s == "ellipse") return SpotShape::ellipse;
  if (s == "ring") return SpotShape::ring;
  throw std::invalid_argument("unknown spot shape '" + s + "'");
}

struct AuxiliarySpot {
  double amplitude{0.5};  // peak relative to the main spot, < 1
  double size{0.5};       // variance relative to sigma2
};

struct SimConfig {
  double sigma2{1.0};
  double alpha{1.0};
  double noise_level{0.10};   // noise ~ N(m, m^2) with m = block max * noise_level / 2
  double cross_width{-1.0};   // bins; negative derives ceil(sqrt(sigma2)), 0 disables
  SpotShape shape{SpotShape::gaussian};
  std::optional<AuxiliarySpot> auxiliary{};
  int trap_pixels{0};
  std::uint64_t seed{0};

  void validate() const {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
      throw std::invalid_argument("spot variance must be positive and finite");
    }
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) {
      throw std::invalid_argument("noise level must lie in [0, 1]");
    }
    if (!(alpha >= 1.0)) {
      throw std::invalid_argument("intensity must be >= 1");
    }
    if (trap_pixels < 0) {
      throw std::invalid_argument("trap pixel count must be nonnegative");
    }
  }

  [[nodiscard]] int cross_bins() const {
    if (cross_width < 0.0) {
      return static_cast<int>(std::ceil(std::sqrt(sigma2)));
    }
    return static_cast<int>(std::ceil(cross_width));
  }
};

// Priors of the simulator: sigma2 ~ U(0.1, 10), alpha ~ U{1..1000}.
inline void sample_spot_priors(SimConfig &cfg, Engine &rng) {
  cfg.sigma2 = uniform(rng, 0.1, 10.0);
  cfg.alpha = static_cast<double>(uniform_int(rng, 1, 1000));
}

namespace detail {

[[nodiscard]] inline Eigen::Index clamp_bin(double c, Eigen::Index n) {
  return std::clamp(static_cast<Eigen::Index>(std::llround(c)), Eigen::Index{0}, n - 1);
}

struct CrossExtent {
  Eigen::Index row_begin{}, row_end{}, col_begin{}, col_end{};
  [[nodiscard]] bool contains(Eigen::Index a, Eigen::Index b) const {
    return (a >= row_begin && a < row_end) || (b >= col_begin && b < col_end);
  }
};

[[nodiscard]] inline CrossExtent cross_extent(Eigen::Index rows, Eigen::Index cols, double cr, double cc, int width) {
  if (width <= 0) {
    return {0, 0, 0, 0};
  }
  const auto w = static_cast<Eigen::Index>(width);
  const auto r0 = clamp_bin(cr, rows) - (w - 1) / 2;
  const auto c0 = clamp_bin(cc, cols) - (w - 1) / 2;
  return {std::max<Eigen::Index>(r0, 0), std::min(r0 + w, rows), std::max<Eigen::Index>(c0, 0),
          std::min(c0 + w, cols)};
}

}  // namespace detail

// One upper trans-block: rows follow the chromosome whose spot coordinate is
// `center_row` (bins), columns `center_col`. Pixel a sits at coordinate a.
[[nodiscard]] inline Matrix simulate_block(Eigen::Index rows, Eigen::Index cols, double center_row, double center_col,
                                           const SimConfig &cfg, std::uint64_t block_seed) {
  Matrix m(rows, cols);
  const double s2 = cfg.sigma2;
  const double peak = cfg.alpha / (2.0 * std::numbers::pi * s2);

  double var_r = s2;
  double var_c = s2;
  if (cfg.shape == SpotShape::ellipse) {
    auto rng = make_engine(block_seed, {4});
    const double ratio = uniform(rng, 1.5, 3.0);
    var_r = s2 * ratio;
    var_c = s2 / ratio;
  }
  const double sigma = std::sqrt(s2);
  const double half_side = std::max(sigma, 0.5);
  const double ring_radius = 2.0 * sigma;
  const double ring_width = std::max(0.5 * sigma, 0.5);

  for (Eigen::Index a = 0; a < rows; ++a) {
    const double dr = static_cast<double>(a) - center_row;
    for (Eigen::Index b = 0; b < cols; ++b) {
      const double dc = static_cast<double>(b) - center_col;
      double v = 0.0;
      switch (cfg.shape) {
        case SpotShape::gaussian:
        case SpotShape::ellipse:
          v = peak * std::exp(-0.5 * (dr * dr / var_r + dc * dc / var_c));
          break;
        case SpotShape::square:
          v = (std::abs(dr) <= half_side && std::abs(dc) <= half_side) ? peak : 0.0;
          break;
        case SpotShape::ring: {
          const double rho = std::sqrt(dr * dr + dc * dc) - ring_radius;
          v = peak * std::exp(-0.5 * rho * rho / (ring_width * ring_width));
          break;
        }
      }
      m(a, b) = v;
    }
  }

  if (cfg.auxiliary && cfg.auxiliary->amplitude > 0.0) {
    auto rng = make_engine(block_seed, {2});
    const double ar = uniform(rng, 0.0, static_cast<double>(rows));
    const double ac = uniform(rng, 0.0, static_cast<double>(cols));
    const double avar = s2 * cfg.auxiliary->size;
    const double amp = cfg.auxiliary->amplitude * peak;
    for (Eigen::Index a = 0; a < rows; ++a) {
      for (Eigen::Index b = 0; b < cols; ++b) {
        const double dr = static_cast<double>(a) - ar;
        const double dc = static_cast<double>(b) - ac;
        m(a, b) += amp * std::exp(-0.5 * (dr * dr + dc * dc) / avar);
      }
    }
  }

  if (cfg.noise_level > 0.0) {
    auto rng = make_engine(block_seed, {1});
    std::normal_distribution<double> z(0.0, 1.0);
    const double mu = m.maxCoeff() * cfg.noise_level * 0.5;
    for (Eigen::Index a = 0; a < rows; ++a) {
      for (Eigen::Index b = 0; b < cols; ++b) {
        m(a, b) = std::max(0.0, m(a, b) + mu + mu * z(rng));
      }
    }
  }

  const auto cross = detail::cross_extent(rows, cols, center_row, center_col, cfg.cross_bins());

  if (cfg.trap_pixels > 0) {
    auto rng = make_engine(block_seed, {3});
    const double top = m.maxCoeff();
    std::vector<Eigen::Index> free;
    free.reserve(static_cast<std::size_t>(rows * cols));
    for (Eigen::Index a = 0; a < rows; ++a) {
      for (Eigen::Index b = 0; b < cols; ++b) {
        if (!cross.contains(a, b)) {
          free.push_back(a * cols + b);
        }
      }
    }
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(cfg.trap_pixels), free.size());
    // partial Fisher-Yates
    for (std::size_t t = 0; t < want; ++t) {
      const auto pick = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(t),
                                                             static_cast<std::int64_t>(free.size()) - 1));
      std::swap(free[t], free[pick]);
      m(free[t] / cols, free[t] % cols) = top;
    }
  }

  for (Eigen::Index a = cross.row_begin; a < cross.row_end; ++a) {
    m.row(a).setZero();
  }
  for (Eigen::Index b = cross.col_begin; b < cross.col_end; ++b) {
    m.col(b).setZero();
  }
  return m;
}

namespace detail {

[[nodiscard]] inline Matrix upper_block(const Genome &g, const ParamVector &theta, const SimConfig &cfg,
                                        std::size_t i, std::size_t j) {
  const auto r = static_cast<double>(g.resolution());
  return simulate_block(static_cast<Eigen::Index>(g.bins(i)), static_cast<Eigen::Index>(g.bins(j)),
                        theta.positions[i] / r, theta.positions[j] / r, cfg, derive_seed(cfg.seed, {i, j}));
}

}  // namespace detail

// Only trans-blocks are populated; C = U + U^T.
[[nodiscard]] inline ContactMap simulate(const Genome &genome, const ParamVector &theta, const SimConfig &cfg) {
  cfg.validate();
  if (!(theta.genome == genome)) {
    throw std::invalid_argument("parameter vector belongs to a different genome");
  }
  theta.validate();
  ContactMap map{genome};
  for (std::size_t i = 0; i < genome.size(); ++i) {
    for (std::size_t j = i + 1; j < genome.size(); ++j) {
      const Matrix u = detail::upper_block(genome, theta, cfg, i, j);
      map.block(i, j) = u;
      map.block(j, i) = u.transpose();
    }
  }
  return map;
}

// Same values as extract_trans_row(simulate(...), target) without building the full map.
[[nodiscard]] inline TransRow simulate_trans_row(const Genome &genome, const ParamVector &theta, const SimConfig &cfg,
                                                 std::size_t target) {
  cfg.validate();
  theta.validate();
  if (target >= genome.size()) {
    throw std::out_of_range("target chromosome out of range");
  }
  TransRow row{genome, target, {}};
  row.blocks.reserve(genome.size() - 1);
  for (std::size_t j = 0; j < genome.size(); ++j) {
    if (j == target) {
      continue;
    }
    if (j > target) {
      row.blocks.push_back({j, detail::upper_block(genome, theta, cfg, target, j)});
    } else {
      row.blocks.push_back({j, detail::upper_block(genome, theta, cfg, j, target).transpose()});
    }
  }
  return row;
}

[[nodiscard]] inline ParamVector sample_prior(const Genome &genome, Engine &rng) {
  std::vector<double> p(genome.size());
  for (std::size_t i = 0; i < genome.size(); ++i) {
    p[i] = uniform(rng, 1.0, static_cast<double>(genome.length(i)) - 1.0);
  }
  return ParamVector{genome, std::move(p)};
}

struct TrainBatchSpec {
  std::size_t min_chroms{2};
  std::size_t max_chroms{10};
  std::vector<std::size_t> chrom_counts{};  // overrides the range when non-empty
  double min_length{2e5};
  double max_length{2e6};
  std::uint64_t resolution{32'000};
  std::size_t batch_size{200};
  std::size_t patch_size{4};
  double noise_level{0.10};
  std::optional<double> fixed_sigma2{};

  void validate() const {
    if (chrom_counts.empty() && (min_chroms < 2 || max_chroms < min_chroms)) {
      throw std::invalid_argument("chromosome count range must satisfy 2 <= min <= max");
    }
    for (const auto c : chrom_counts) {
      if (c < 2) {
        throw std::invalid_argument("every genome needs at least 2 chromosomes");
      }
    }
    if (!(min_length >= 2.0 * static_cast<double>(resolution)) || max_length < min_length) {
      throw std::invalid_argument("chromosome length range must span at least 2 bins");
    }
    if (batch_size == 0 || patch_size == 0) {
      throw std::invalid_argument("batch and patch sizes must be positive");
    }
  }
};

struct TrainingBatch {
  Genome genome{};
  std::size_t target{};
  std::vector<TransRow> rows{};      // normalized to [0, 1] then padded per block
  std::vector<double> targets{};     // theta_target / l_target
  std::vector<ParamVector> params{};
};

[[nodiscard]] inline Genome sample_genome(const TrainBatchSpec &spec, Engine &rng) {
  std::size_t count = 0;
  if (!spec.chrom_counts.empty()) {
    count = spec.chrom_counts[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(spec.chrom_counts.size()) - 1))];
  } else {
    count = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(spec.min_chroms),
                                                 static_cast<std::int64_t>(spec.max_chroms)));
  }
  std::vector<std::uint64_t> lengths(count);
  for (auto &l : lengths) {
    l = static_cast<std::uint64_t>(std::llround(uniform(rng, spec.min_length, spec.max_length)));
  }
  return Genome{std::move(lengths), spec.resolution};
}

// One synthetic genome per batch; every member shares its block structure.
[[nodiscard]] inline TrainingBatch generate_training_batch(const TrainBatchSpec &spec, std::uint64_t seed,
                                                           std::size_t count = 0) {
  spec.validate();
  if (count == 0) {
    count = spec.batch_size;
  }
  auto rng = make_engine(seed, {0});
  TrainingBatch batch{};
  batch.genome = sample_genome(spec, rng);
  batch.target = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(batch.genome.size()) - 1));
  batch.rows.reserve(count);
  batch.targets.reserve(count);
  batch.params.reserve(count);
  for (std::size_t m = 0; m < count; ++m) {
    auto srng = make_engine(seed, {1, m});
    SimConfig cfg{};
    sample_spot_priors(cfg, srng);
    if (spec.fixed_sigma2) {
      cfg.sigma2 = *spec.fixed_sigma2;
    }
    cfg.noise_level = spec.noise_level;
    cfg.seed = derive_seed(seed, {2, m});
    auto theta = sample_prior(batch.genome, srng);
    auto row = simulate_trans_row(batch.genome, theta, cfg, batch.target);
    batch.rows.push_back(pad_blocks(normalize_01(row), spec.patch_size));
    batch.targets.push_back(theta.positions[batch.target] / static_cast<double>(batch.genome.length(batch.target)));
    batch.params.push_back(std::move(theta));
  }
  return batch;
}

}  // namespace bfkit
