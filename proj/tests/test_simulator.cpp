#include <gtest/gtest.h>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <set>

#include "bfkit/simulator.hpp"
#include "support/generators.hpp"

using namespace bfkit;
using bfkit::testing::for_all;
using bfkit::testing::Gen;

namespace {

SimConfig random_config(Gen &g) {
  SimConfig c{};
  c.sigma2 = g.real(0.1, 10.0);
  c.alpha = static_cast<double>(g.integer(1, 1000));
  c.noise_level = g.coin() ? 0.0 : g.real(0.0, 1.0);
  const SpotShape shapes[] = {SpotShape::gaussian, SpotShape::square, SpotShape::ellipse, SpotShape::ring};
  c.shape = shapes[g.index(4)];
  if (g.coin()) {
    c.auxiliary = AuxiliarySpot{g.real(0.1, 0.9), g.real(0.2, 1.0)};
  }
  c.trap_pixels = static_cast<int>(g.integer(0, 5));
  c.seed = g.seed();
  return c;
}

ParamVector random_theta(Gen &g, const Genome &genome) { return sample_prior(genome, g.engine()); }

// Density at bin centres, written out independently of the simulator.
double ideal_gaussian(double a, double b, double ci, double cj, double s2, double alpha) {
  const double d2 = (a - ci) * (a - ci) + (b - cj) * (b - cj);
  return alpha / (2.0 * std::numbers::pi * s2) * std::exp(-d2 / (2.0 * s2));
}

}  // namespace

TEST(Simulate, SymmetricNonnegativeWithEmptyCisBlocks) {
  for_all(60, 21, [](Gen &g, std::size_t) {
    const auto genome = g.genome(static_cast<std::size_t>(g.integer(2, 5)), 3, 25);
    const auto cfg = random_config(g);
    const auto map = simulate(genome, random_theta(g, genome), cfg);
    EXPECT_EQ(map.values, map.values.transpose());
    EXPECT_GE(map.values.minCoeff(), 0.0);
    for (std::size_t i = 0; i < genome.size(); ++i) {
      EXPECT_EQ(map.block(i, i).cwiseAbs().maxCoeff(), 0.0);
    }
  });
}

TEST(Simulate, NoiselessGaussianPeaksAtRoundedPosition) {
  for_all(40, 22, [](Gen &g, std::size_t) {
    const auto genome = g.genome(static_cast<std::size_t>(g.integer(2, 4)), 5, 30);
    SimConfig cfg{};
    cfg.sigma2 = g.real(0.1, 10.0);
    cfg.alpha = static_cast<double>(g.integer(1, 1000));
    cfg.noise_level = 0.0;
    cfg.cross_width = 0.0;
    const auto theta = random_theta(g, genome);
    const auto map = simulate(genome, theta, cfg);
    const auto r = static_cast<double>(genome.resolution());
    for (std::size_t i = 0; i < genome.size(); ++i) {
      for (std::size_t j = i + 1; j < genome.size(); ++j) {
        const Matrix b = map.block(i, j);
        Eigen::Index a = 0;
        Eigen::Index c = 0;
        (void)b.maxCoeff(&a, &c);
        const auto ei = std::llround(theta.positions[i] / r);
        const auto ej = std::llround(theta.positions[j] / r);
        EXPECT_EQ(a, std::min<long long>(ei, b.rows() - 1));
        EXPECT_EQ(c, std::min<long long>(ej, b.cols() - 1));
      }
    }
  });
}

TEST(Simulate, NoiselessGaussianMatchesIdealOutsideCross) {
  for_all(30, 23, [](Gen &g, std::size_t) {
    const auto genome = g.genome(2, 5, 30);
    SimConfig cfg{};
    cfg.sigma2 = g.real(0.1, 10.0);
    cfg.alpha = static_cast<double>(g.integer(1, 1000));
    cfg.noise_level = 0.0;
    const auto theta = random_theta(g, genome);
    const auto map = simulate(genome, theta, cfg);
    const auto r = static_cast<double>(genome.resolution());
    const double ci = theta.positions[0] / r;
    const double cj = theta.positions[1] / r;
    const auto w = static_cast<long long>(std::ceil(std::sqrt(cfg.sigma2)));
    const Matrix b = map.block(0, 1);
    for (Eigen::Index a = 0; a < b.rows(); ++a) {
      for (Eigen::Index c = 0; c < b.cols(); ++c) {
        const long long ra = std::clamp<long long>(std::llround(ci), 0, b.rows() - 1) - (w - 1) / 2;
        const long long rc = std::clamp<long long>(std::llround(cj), 0, b.cols() - 1) - (w - 1) / 2;
        const bool in_cross = (a >= ra && a < ra + w) || (c >= rc && c < rc + w);
        if (in_cross) {
          EXPECT_EQ(b(a, c), 0.0);
        } else {
          EXPECT_NEAR(b(a, c), ideal_gaussian(static_cast<double>(a), static_cast<double>(c), ci, cj, cfg.sigma2,
                                              cfg.alpha),
                      1e-12 * cfg.alpha);
        }
      }
    }
  });
}

TEST(Simulate, CrossZeroesCentreRowAndColumnUnderNoise) {
  for_all(30, 24, [](Gen &g, std::size_t) {
    const auto genome = g.genome(3, 5, 20);
    SimConfig cfg = random_config(g);
    cfg.shape = SpotShape::gaussian;
    cfg.noise_level = 0.5;
    const auto theta = random_theta(g, genome);
    const auto map = simulate(genome, theta, cfg);
    const auto r = static_cast<double>(genome.resolution());
    const Matrix b = map.block(0, 2);
    const auto ra = std::min<Eigen::Index>(std::llround(theta.positions[0] / r), b.rows() - 1);
    const auto rc = std::min<Eigen::Index>(std::llround(theta.positions[2] / r), b.cols() - 1);
    EXPECT_EQ(b.row(ra).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(b.col(rc).cwiseAbs().maxCoeff(), 0.0);
  });
}

TEST(Simulate, SeedControlsNoise) {
  Gen g{25};
  const auto genome = g.genome(3, 5, 20);
  const auto theta = random_theta(g, genome);
  SimConfig cfg{};
  cfg.sigma2 = 2.0;
  cfg.alpha = 50.0;
  cfg.noise_level = 0.1;
  cfg.seed = 7;
  const auto a = simulate(genome, theta, cfg);
  const auto b = simulate(genome, theta, cfg);
  EXPECT_EQ(a.values, b.values);
  cfg.seed = 8;
  const auto c = simulate(genome, theta, cfg);
  EXPECT_NE(a.values, c.values);
}

TEST(Simulate, IntensityCancelsUnderNormalization) {
  for_all(20, 26, [](Gen &g, std::size_t) {
    const auto genome = g.genome(3, 5, 20);
    const auto theta = random_theta(g, genome);
    SimConfig cfg = random_config(g);
    cfg.alpha = 1.0;
    const auto lo = simulate_trans_row(genome, theta, cfg, 1);
    cfg.alpha = 1000.0;
    const auto hi = simulate_trans_row(genome, theta, cfg, 1);
    const auto nlo = normalize_01(lo);
    const auto nhi = normalize_01(hi);
    for (std::size_t k = 0; k < nlo.blocks.size(); ++k) {
      EXPECT_LT((nlo.blocks[k].values - nhi.blocks[k].values).cwiseAbs().maxCoeff(), 1e-12);
    }
  });
}

TEST(Simulate, TransRowMatchesFullMapExtraction) {
  for_all(20, 27, [](Gen &g, std::size_t) {
    const auto genome = g.genome(static_cast<std::size_t>(g.integer(2, 5)), 3, 20);
    const auto theta = random_theta(g, genome);
    const auto cfg = random_config(g);
    const auto target = g.index(genome.size());
    const auto direct = simulate_trans_row(genome, theta, cfg, target);
    const auto via_map = extract_trans_row(simulate(genome, theta, cfg), target);
    ASSERT_EQ(direct.blocks.size(), via_map.blocks.size());
    for (std::size_t k = 0; k < direct.blocks.size(); ++k) {
      EXPECT_EQ(direct.blocks[k].source, via_map.blocks[k].source);
      EXPECT_EQ(direct.blocks[k].values, via_map.blocks[k].values);
    }
  });
}

TEST(Simulate, RejectsBadInput) {
  const Genome genome{{100'000, 100'000}, 32'000};
  SimConfig cfg{};
  EXPECT_THROW((void)simulate(genome, ParamVector{genome, {5.0, 150'000.0}}, cfg), std::out_of_range);
  const ParamVector ok{genome, {5.0, 5.0}};
  cfg.sigma2 = 0.0;
  EXPECT_THROW((void)simulate(genome, ok, cfg), std::invalid_argument);
  cfg = {};
  cfg.noise_level = 1.5;
  EXPECT_THROW((void)simulate(genome, ok, cfg), std::invalid_argument);
  cfg = {};
  cfg.alpha = 0.5;
  EXPECT_THROW((void)simulate(genome, ok, cfg), std::invalid_argument);
}

TEST(Variants, TrapPixelsEqualBlockMaximum) {
  for_all(30, 28, [](Gen &g, std::size_t) {
    SimConfig cfg{};
    cfg.sigma2 = g.real(0.1, 10.0);
    cfg.alpha = static_cast<double>(g.integer(1, 1000));
    cfg.noise_level = 0.0;
    cfg.trap_pixels = 5;
    const auto rows = static_cast<Eigen::Index>(g.integer(8, 40));
    const auto cols = static_cast<Eigen::Index>(g.integer(8, 40));
    const Matrix b = simulate_block(rows, cols, g.real(0, static_cast<double>(rows)),
                                    g.real(0, static_cast<double>(cols)), cfg, g.seed());
    const double top = b.maxCoeff();
    EXPECT_EQ((b.array() == top).count(), 5);
  });
}

TEST(Variants, RingCentreIsDepleted) {
  SimConfig cfg{};
  cfg.sigma2 = 4.0;
  cfg.alpha = 100.0;
  cfg.noise_level = 0.0;
  cfg.cross_width = 0.0;
  cfg.shape = SpotShape::ring;
  const Matrix b = simulate_block(41, 41, 20.0, 20.0, cfg, 1);
  const double radius = 2.0 * std::sqrt(cfg.sigma2);
  EXPECT_LT(b(20, 20), b(20, 20 + static_cast<Eigen::Index>(radius)));
  EXPECT_LT(b(20, 20), b(20 - static_cast<Eigen::Index>(radius), 20));
}

TEST(Variants, ZeroAuxiliaryAmplitudeIsPlainSpot) {
  for_all(10, 29, [](Gen &g, std::size_t) {
    const auto genome = g.genome(3, 5, 20);
    const auto theta = random_theta(g, genome);
    SimConfig cfg = random_config(g);
    cfg.auxiliary.reset();
    const auto plain = simulate(genome, theta, cfg);
    cfg.auxiliary = AuxiliarySpot{0.0, 0.7};
    EXPECT_EQ(simulate(genome, theta, cfg).values, plain.values);
  });
}

TEST(Variants, SquareIsFlatAndEllipseIsAnisotropic) {
  SimConfig cfg{};
  cfg.sigma2 = 4.0;
  cfg.alpha = 100.0;
  cfg.noise_level = 0.0;
  cfg.cross_width = 0.0;
  cfg.shape = SpotShape::square;
  const Matrix sq = simulate_block(30, 30, 15.0, 15.0, cfg, 3);
  std::set<double> levels(sq.data(), sq.data() + sq.size());
  EXPECT_EQ(levels.size(), 2U);
  EXPECT_EQ(sq(15, 15), sq.maxCoeff());
  EXPECT_EQ(sq(15, 15 + 2), sq(15, 15));
  EXPECT_EQ(sq(15, 15 + 3), 0.0);

  cfg.shape = SpotShape::ellipse;
  const Matrix el = simulate_block(40, 40, 20.0, 20.0, cfg, 3);
  // variance along rows exceeds variance along columns
  EXPECT_GT(el(23, 20), el(20, 23));
}

TEST(TrainingData, TargetsAndSharedStructure) {
  TrainBatchSpec spec{};
  spec.batch_size = 16;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto b = generate_training_batch(spec, s);
    ASSERT_EQ(b.rows.size(), 16U);
    const auto bins = b.genome.bins(b.target);
    const auto padded = (bins + spec.patch_size - 1) / spec.patch_size * spec.patch_size;
    for (std::size_t m = 0; m < b.rows.size(); ++m) {
      EXPECT_GT(b.targets[m], 0.0);
      EXPECT_LT(b.targets[m], 1.0);
      EXPECT_EQ(b.rows[m].target, b.target);
      for (const auto &blk : b.rows[m].blocks) {
        EXPECT_EQ(static_cast<std::size_t>(blk.values.rows()), padded);
        EXPECT_EQ(blk.values.cols() % static_cast<Eigen::Index>(spec.patch_size), 0);
        EXPECT_LE(blk.values.maxCoeff(), 1.0);
        EXPECT_GE(blk.values.minCoeff(), 0.0);
      }
    }
  }
}

TEST(TrainingData, BlockHeightsSpanTheLengthRange) {
  TrainBatchSpec spec{};
  std::set<std::size_t> heights;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto b = generate_training_batch(spec, s, 1);
    for (std::size_t c = 0; c < b.genome.size(); ++c) {
      heights.insert(b.genome.bins(c));
    }
  }
  // ceil(2e5 / 32k) = 7 and ceil(2e6 / 32k) = 63
  EXPECT_GE(*heights.begin(), 7U);
  EXPECT_LE(*heights.rbegin(), 63U);
  EXPECT_GE(static_cast<double>(heights.size()), 0.8 * 57.0);
}

TEST(TrainingData, DeterministicPerSeed) {
  TrainBatchSpec spec{};
  spec.batch_size = 4;
  const auto a = generate_training_batch(spec, 99);
  const auto b = generate_training_batch(spec, 99);
  ASSERT_EQ(a.genome, b.genome);
  EXPECT_EQ(a.targets, b.targets);
  for (std::size_t m = 0; m < a.rows.size(); ++m) {
    for (std::size_t k = 0; k < a.rows[m].blocks.size(); ++k) {
      EXPECT_EQ(a.rows[m].blocks[k].values, b.rows[m].blocks[k].values);
    }
  }
  const auto c = generate_training_batch(spec, 100);
  EXPECT_NE(a.targets, c.targets);
}
