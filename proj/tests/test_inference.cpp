#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bfkit/inference.hpp"
#include "bfkit/simulator.hpp"
#include "support/generators.hpp"

using namespace bfkit;
using bfkit::testing::for_all;
using bfkit::testing::Gen;

namespace {

ModelConfig small_config() {
  ModelConfig c{};
  c.embed_dim = 12;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

// Row-wise correlation written out with plain loops.
double pearson_loops(const std::vector<double> &x, const std::vector<double> &y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

ContactMap noiseless_map(Gen &g, const Genome &genome, ParamVector &theta) {
  SimConfig cfg{};
  cfg.sigma2 = g.real(0.5, 4.0);
  cfg.alpha = static_cast<double>(g.integer(10, 1000));
  cfg.noise_level = 0.0;
  theta = sample_prior(genome, g.engine());
  return simulate(genome, theta, cfg);
}

}  // namespace

TEST(NormalizedError, ExamplesAndScale) {
  const Genome g{{1'000'000}, 32'000};
  EXPECT_EQ(normalized_error(ParamVector{g, {500'000}}, ParamVector{g, {500'000}}), 0.0);
  EXPECT_DOUBLE_EQ(normalized_error(ParamVector{g, {532'000}}, ParamVector{g, {500'000}}), 1.0);
  const std::vector<double> a{100'000, 300'000};
  const std::vector<double> b{110'000, 270'000};
  EXPECT_DOUBLE_EQ(normalized_error(a, b, 10'000), 2.0);
  EXPECT_DOUBLE_EQ(normalized_error(a, b, 20'000), 1.0);
  EXPECT_THROW((void)normalized_error(a, {1.0}, 10'000), std::invalid_argument);
  EXPECT_THROW((void)normalized_error(a, b, 0), std::invalid_argument);
}

TEST(Mismatch, SelfCorrelationIsOne) {
  for_all(20, 41, [](Gen &g, std::size_t) {
    const auto genome = g.genome(static_cast<std::size_t>(g.integer(2, 4)), 3, 15);
    ContactMap m{genome, g.symmetric_positive(static_cast<Eigen::Index>(genome.total_bins()))};
    EXPECT_NEAR(mismatch_correlation(m, m), 1.0, 1e-12);
  });
}

TEST(Mismatch, MatchesLoopOracle) {
  for_all(20, 42, [](Gen &g, std::size_t) {
    const auto genome = g.genome(2, 3, 15);
    const auto n = static_cast<Eigen::Index>(genome.total_bins());
    ContactMap a{genome, g.symmetric_positive(n)};
    ContactMap b{genome, g.symmetric_positive(n)};
    const Matrix ba = a.block(0, 1);
    const Matrix bb = b.block(0, 1);
    double s = 0.0;
    for (Eigen::Index r = 0; r < ba.rows(); ++r) {
      std::vector<double> x;
      std::vector<double> y;
      for (Eigen::Index c = 0; c < ba.cols(); ++c) {
        x.push_back(ba(r, c));
        y.push_back(bb(r, c));
      }
      s += pearson_loops(x, y);
    }
    EXPECT_NEAR(mismatch_correlation(a, b), s / static_cast<double>(ba.rows()), 1e-12);
  });
}

TEST(Mismatch, ConstantRowsAreUndefined) {
  const Genome g{{64'000, 64'000}, 32'000};
  ContactMap m{g, Matrix::Ones(4, 4)};
  EXPECT_THROW((void)mismatch_correlation(m, m), std::domain_error);
}

TEST(Estimate, FullSubsetIgnoresRepeats) {
  Gen g{43};
  const auto genome = g.genome(4, 6, 20);
  ParamVector theta;
  const auto map = noiseless_map(g, genome, theta);
  const BlockFormer<double> model{small_config(), 1};
  EstimateOptions one{};
  one.repeats = 1;
  EstimateOptions many{};
  many.repeats = 7;
  many.seed = 99;
  const auto a = estimate(map, model, one);
  const auto b = estimate(map, model, many);
  EXPECT_EQ(a.positions, b.positions);
  for (std::size_t i = 0; i < genome.size(); ++i) {
    const auto row = extract_trans_row(map, i);
    EXPECT_EQ(a.positions[i], model.predict(prepare_row(row, model.config())));
  }
}

TEST(Estimate, SingleRepeatIsOneSubsetPrediction) {
  Gen g{44};
  const auto genome = g.genome(5, 6, 20);
  ParamVector theta;
  const auto map = noiseless_map(g, genome, theta);
  const BlockFormer<double> model{small_config(), 2};
  EstimateOptions opts{};
  opts.k = 2;
  opts.repeats = 1;
  opts.seed = 8;
  const auto est = estimate(map, model, opts);
  for (std::size_t i = 0; i < genome.size(); ++i) {
    const auto sub = subsample_blocks(extract_trans_row(map, i), 2, derive_seed(8, {i, 0}));
    EXPECT_EQ(est.positions[i], model.predict(prepare_row(sub, model.config())));
  }
  opts.k = 5;
  EXPECT_THROW((void)estimate(map, model, opts), std::out_of_range);
}

TEST(Estimate, ChromosomesAreIndependent) {
  // the estimate of chromosome 0 only depends on its own trans-row
  Gen g{45};
  const auto genome = g.genome(3, 6, 20);
  ParamVector theta;
  auto map = noiseless_map(g, genome, theta);
  const BlockFormer<double> model{small_config(), 3};
  const auto before = estimate(map, model, {});
  map.block(1, 2).setConstant(0.25);
  map.block(2, 1).setConstant(0.25);
  const auto after = estimate(map, model, {});
  EXPECT_EQ(before.positions[0], after.positions[0]);
}

TEST(GaussianFit, RecoversNoiselessCentres) {
  for_all(20, 46, [](Gen &g, std::size_t) {
    const auto genome = g.genome(static_cast<std::size_t>(g.integer(2, 5)), 15, 40);
    ParamVector truth;
    const auto map = noiseless_map(g, genome, truth);
    const auto r = static_cast<double>(genome.resolution());
    std::vector<double> init = truth.positions;
    for (std::size_t i = 0; i < init.size(); ++i) {
      init[i] = std::clamp(init[i] + g.real(-r, r), 1.0, static_cast<double>(genome.length(i)) - 1.0);
    }
    const auto fit = gaussian_fit_refine(map, ParamVector{genome, init});
    for (std::size_t i = 0; i < genome.size(); ++i) {
      EXPECT_LT(std::abs(fit.theta.positions[i] - truth.positions[i]), 0.1 * r) << "chromosome " << i;
      EXPECT_GT(fit.theta.positions[i], 0.0);
      EXPECT_LT(fit.theta.positions[i], static_cast<double>(genome.length(i)));
    }
    for (const auto &pass : fit.objective_trace) {
      for (std::size_t k = 1; k < pass.size(); ++k) {
        EXPECT_LE(pass[k], pass[k - 1]);
      }
    }
  });
}

TEST(GaussianFit, EmptyBlockFitsZeroAmplitude) {
  Gen g{47};
  const auto genome = g.genome(3, 15, 30);
  ParamVector truth;
  auto map = noiseless_map(g, genome, truth);
  map.block(0, 1).setZero();
  map.block(1, 0).setZero();
  const std::vector<double> mu{truth.positions[0] / 32'000.0, truth.positions[1] / 32'000.0,
                               truth.positions[2] / 32'000.0};
  const auto windows = detail::fit_windows(genome, mu, 6);
  const auto ev = detail::fit_objective(map, windows, mu, 1.3, true);
  std::vector<detail::FitWindow> rest;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w].i == 0 && windows[w].j == 1) {
      EXPECT_EQ(ev.amplitude[w], 0.0);
    } else {
      rest.push_back(windows[w]);
    }
  }
  ASSERT_EQ(rest.size() + 1, windows.size());
  const auto without = detail::fit_objective(map, rest, mu, 1.3, true);
  EXPECT_NEAR(ev.grad_mu[0], without.grad_mu[0], 1e-12);
  EXPECT_NEAR(ev.grad_mu[1], without.grad_mu[1], 1e-12);
}

TEST(Multires, CropClipsAtChromosomeEdges) {
  EXPECT_EQ(detail::crop_range(3.0, 100, 60), (std::pair<Eigen::Index, Eigen::Index>{0, 60}));
  EXPECT_EQ(detail::crop_range(98.0, 100, 60), (std::pair<Eigen::Index, Eigen::Index>{40, 60}));
  EXPECT_EQ(detail::crop_range(50.0, 100, 60), (std::pair<Eigen::Index, Eigen::Index>{20, 60}));
  EXPECT_EQ(detail::crop_range(10.0, 30, 60), (std::pair<Eigen::Index, Eigen::Index>{0, 30}));
}

TEST(Report, CarriesErrorsWhenReferenceGiven) {
  const Genome g{{1'000'000, 2'000'000}, 10'000};
  const ParamVector est{g, {100'000, 500'000}};
  const ParamVector ref{g, {120'000, 500'000}};
  const auto rep = make_report(est, ref, 0.5, "blockformer");
  EXPECT_EQ(rep.abs_error, (std::vector<double>{20'000, 0}));
  ASSERT_TRUE(rep.normalized_error.has_value());
  EXPECT_DOUBLE_EQ(*rep.normalized_error, 1.0);
  EXPECT_FALSE(make_report(est, std::nullopt, 0.5, "x").normalized_error.has_value());
}
