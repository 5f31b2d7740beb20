#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bfkit/loops.hpp"
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

Matrix bump_map(Eigen::Index n, Eigen::Index i, Eigen::Index j, double amp, bool mirror) {
  Matrix m = Matrix::Ones(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const double d2 = static_cast<double>((a - i) * (a - i) + (b - j) * (b - j));
      m(a, b) += amp * std::exp(-0.5 * d2 / 2.0);
      if (mirror) {
        const double e2 = static_cast<double>((a - j) * (a - j) + (b - i) * (b - i));
        m(a, b) += amp * std::exp(-0.5 * e2 / 2.0);
      }
    }
  }
  return m;
}

std::size_t accepted(const std::vector<LoopCandidate> &c) {
  std::size_t n = 0;
  for (const auto &x : c) {
    n += x.accepted ? 1 : 0;
  }
  return n;
}

}  // namespace

TEST(Blur, PreservesConstantsAndUsesGaussianWeights) {
  const Matrix c = Matrix::Constant(9, 11, 2.5);
  EXPECT_LT((gaussian_blur(c, 1.0) - c).cwiseAbs().maxCoeff(), 1e-14);
  Matrix impulse = Matrix::Zero(21, 21);
  impulse(10, 10) = 1.0;
  const Matrix b = gaussian_blur(impulse, 1.0);
  EXPECT_NEAR(b(10, 11) / b(10, 10), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(b(11, 11) / b(10, 10), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(b.sum(), 1.0, 1e-12);
  EXPECT_EQ(b(10, 14), 0.0);  // beyond 3 sigma
}

TEST(Percentile, LinearInterpolationOverFiniteEntries) {
  Matrix m(1, 6);
  m << 1, 2, 3, 4, 5, std::numeric_limits<double>::quiet_NaN();
  EXPECT_DOUBLE_EQ(percentile_of(m, 50.0), 3.0);
  EXPECT_DOUBLE_EQ(percentile_of(m, 25.0), 2.0);
  EXPECT_DOUBLE_EQ(percentile_of(m, 90.0), 4.6);
  EXPECT_DOUBLE_EQ(percentile_of(m, 100.0), 5.0);
}

TEST(Preloc, SingleBumpGivesOneCandidateAtArgmax) {
  for_all(20, 61, [](Gen &g, std::size_t) {
    const auto n = static_cast<Eigen::Index>(g.integer(40, 80));
    const auto i = static_cast<Eigen::Index>(g.integer(3, n / 2 - 3));
    const auto j = static_cast<Eigen::Index>(g.integer(i + 5, n - 4));
    const auto out = preloc_loops(bump_map(n, i, j, g.real(20.0, 100.0), true));
    ASSERT_EQ(accepted(out), 1U);
    for (const auto &c : out) {
      if (c.accepted) {
        EXPECT_EQ(c.i, i);
        EXPECT_EQ(c.j, j);
      }
    }
  });
}

TEST(Preloc, NearDiagonalBumpIsRejected) {
  const Matrix m = bump_map(40, 20, 22, 50.0, false);
  const auto out = preloc_loops(m);
  EXPECT_EQ(accepted(out), 0U);
  ASSERT_FALSE(out.empty());
  PrelocOptions loose{};
  loose.min_diag = 2;
  EXPECT_EQ(accepted(preloc_loops(m, loose)), 1U);
}

TEST(Preloc, ConstantMapHasNoCandidates) {
  EXPECT_TRUE(preloc_loops(Matrix::Constant(30, 30, 4.0)).empty());
  EXPECT_THROW((void)preloc_loops(Matrix{}), std::invalid_argument);
  EXPECT_THROW((void)preloc_loops(Matrix::Ones(3, 4)), std::invalid_argument);
}

TEST(Preloc, CountsMonotoneInPercentileAndMinDiag) {
  for_all(15, 62, [](Gen &g, std::size_t) {
    const auto n = static_cast<Eigen::Index>(g.integer(20, 50));
    const Matrix m = g.symmetric_positive(n);
    std::size_t last = std::numeric_limits<std::size_t>::max();
    for (double q = 50.0; q <= 100.0; q += 5.0) {
      PrelocOptions o{};
      o.percentile = q;
      const auto c = accepted(preloc_loops(m, o));
      EXPECT_LE(c, last);
      last = c;
    }
    last = std::numeric_limits<std::size_t>::max();
    for (Eigen::Index d = 0; d < 12; ++d) {
      PrelocOptions o{};
      o.min_diag = d;
      const auto c = accepted(preloc_loops(m, o));
      EXPECT_LE(c, last);
      last = c;
    }
  });
}

TEST(Window, ClipsAtCorners) {
  const Matrix m = Matrix::Random(100, 100);
  const auto a = cut_window(m, 50, 60);
  EXPECT_EQ(a.row0, 35);
  EXPECT_EQ(a.col0, 45);
  EXPECT_EQ(a.values.rows(), 30);
  EXPECT_EQ(a.values, m.block(35, 45, 30, 30));
  const auto b = cut_window(m, 2, 97);
  EXPECT_EQ(b.row0, 0);
  EXPECT_EQ(b.values.rows(), 17);
  EXPECT_EQ(b.col0, 82);
  EXPECT_EQ(b.values.cols(), 18);
  EXPECT_EQ(b.values(0, 0), m(0, 82));
}

TEST(Localize, SymmetricWindowGivesEqualCoordinates) {
  const BlockFormer<double> model{small_config(), 6};
  Gen g{63};
  const Matrix s = g.symmetric_positive(60);
  const auto w = cut_window(s, 30, 30);
  ASSERT_EQ(w.values, w.values.transpose());
  const auto est = localize_loop(w, model, 10'000);
  EXPECT_EQ(est.x, est.y);
}

TEST(Localize, EstimatesStayInsideWindowSpan) {
  const BlockFormer<double> model{small_config(), 7};
  for_all(20, 64, [&](Gen &g, std::size_t) {
    const Matrix m = g.matrix(80, 80, 0.0, 1.0);
    const auto w = cut_window(m, g.integer(0, 79), g.integer(0, 79));
    if (w.values.rows() < 4 || w.values.cols() < 4) {
      EXPECT_THROW((void)localize_loop(w, model, 5'000), std::invalid_argument);
      return;
    }
    const auto est = localize_loop(w, model, 5'000);
    EXPECT_GE(est.x, static_cast<double>(w.row0) * 5'000.0);
    EXPECT_LE(est.x, static_cast<double>(w.row0 + w.values.rows()) * 5'000.0);
    EXPECT_GE(est.y, static_cast<double>(w.col0) * 5'000.0);
    EXPECT_LE(est.y, static_cast<double>(w.col0 + w.values.cols()) * 5'000.0);
  });
}

TEST(FindLoops, InvariantToGlobalScaling) {
  const BlockFormer<double> model{small_config(), 8};
  const auto lm = synthetic_loop_map({}, 3);
  const auto a = find_loops(lm.values, model, 10'000);
  const auto b = find_loops((7.25 * lm.values).eval(), model, 10'000);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_FALSE(a.empty());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].candidate.i, b[k].candidate.i);
    EXPECT_EQ(a[k].candidate.j, b[k].candidate.j);
    EXPECT_NEAR(a[k].estimate.x, b[k].estimate.x, 1e-6);
    EXPECT_NEAR(a[k].estimate.y, b[k].estimate.y, 1e-6);
  }
}

TEST(SyntheticLoopMap, SymmetricWithSeparatedLoop) {
  for_all(20, 65, [](Gen &g, std::size_t) {
    LoopMapSpec spec{};
    spec.noise = g.coin() ? 0.0 : 0.05;
    const auto lm = synthetic_loop_map(spec, g.seed());
    EXPECT_EQ(lm.values, lm.values.transpose());
    EXPECT_LT(lm.i, lm.j);
    EXPECT_GE(lm.j - lm.i, 10.0);
    EXPECT_GE(lm.values.minCoeff(), 0.0);
  });
}
