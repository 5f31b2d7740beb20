#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "bfkit/config.hpp"
#include "bfkit/trainer.hpp"
#include "support/generators.hpp"

using namespace bfkit;
using bfkit::testing::for_all;
using bfkit::testing::Gen;

namespace {

TrainConfig tiny_config() {
  TrainConfig c{};
  c.total_samples = 24;
  c.batch_size = 6;
  c.epochs = 2;
  c.lr = 1e-3;
  c.seed = 5;
  c.model.embed_dim = 12;
  c.model.depth = 1;
  c.model.heads = 2;
  c.model.mlp_ratio = 2;
  c.data.min_chroms = 2;
  c.data.max_chroms = 3;
  c.data.max_length = 4e5;
  return c;
}

}  // namespace

TEST(Loss, Examples) {
  EXPECT_EQ(mse_loss(std::vector<double>{0.3, 0.7}, {0.3, 0.7}), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<double>{0.5}, {0.25}), 0.0625);
  EXPECT_THROW((void)mse_loss(std::vector<double>{}, {}), std::invalid_argument);
  EXPECT_THROW((void)mse_loss(std::vector<double>{0.1}, {0.1, 0.2}), std::invalid_argument);
}

TEST(Loss, MatchesBruteForce) {
  for_all(50, 31, [](Gen &g, std::size_t) {
    const auto n = static_cast<std::size_t>(g.integer(1, 300));
    std::vector<double> u(n);
    std::vector<double> t(n);
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = g.real(0.0, 1.0);
      t[i] = g.real(0.0, 1.0);
      s += static_cast<long double>(u[i] - t[i]) * static_cast<long double>(u[i] - t[i]);
    }
    EXPECT_NEAR(mse_loss(u, t), static_cast<double>(s / static_cast<long double>(n)), 1e-12);
  });
}

TEST(Train, OneEpochLogsFiniteLosses) {
  auto cfg = tiny_config();
  cfg.total_samples = 12;
  cfg.epochs = 1;
  const auto res = train<double>(cfg);
  ASSERT_EQ(res.log.epochs.size(), 1U);
  EXPECT_TRUE(std::isfinite(res.log.epochs[0].train_loss));
  EXPECT_TRUE(std::isfinite(res.log.epochs[0].val_loss));
  EXPECT_EQ(res.log.train_batches.size() + res.log.val_batches.size(), 2U);
}

TEST(Train, SplitIsDisjointAndCoversEveryBatch) {
  auto cfg = tiny_config();
  cfg.total_samples = 100;
  cfg.batch_size = 7;  // last batch truncated
  cfg.epochs = 1;
  EXPECT_EQ(cfg.batch_count(), 15U);
  EXPECT_EQ(cfg.val_batches(), 2U);
  const auto res = train<double>(cfg);
  std::set<std::size_t> tr(res.log.train_batches.begin(), res.log.train_batches.end());
  std::set<std::size_t> va(res.log.val_batches.begin(), res.log.val_batches.end());
  EXPECT_EQ(tr.size() + va.size(), 15U);
  for (const auto v : va) {
    EXPECT_EQ(tr.count(v), 0U);
  }
  // distinct batch seeds, so validation samples never repeat a training batch
  std::set<std::uint64_t> seeds;
  for (std::size_t k = 0; k < 15; ++k) {
    seeds.insert(batch_seed(cfg.seed, k));
  }
  EXPECT_EQ(seeds.size(), 15U);
  const auto last = prepare_batch(cfg, BlockFormer<double>{cfg.model, 1}, 14);
  EXPECT_EQ(last.targets.size(), 2U);
}

TEST(Train, BitwiseReproducibleInDouble) {
  const auto cfg = tiny_config();
  const auto a = train<double>(cfg);
  const auto b = train<double>(cfg);
  ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
  EXPECT_EQ(a.log.initial_val_loss, b.log.initial_val_loss);
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
    EXPECT_EQ(a.log.epochs[e].train_loss, b.log.epochs[e].train_loss);
    EXPECT_EQ(a.log.epochs[e].val_loss, b.log.epochs[e].val_loss);
  }
  const auto ta = a.model.weights().tensors();
  const auto tb = b.model.weights().tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(*ta[i], *tb[i]);
  }
}

TEST(Train, FloatRunsAgreeWithEachOther) {
  const auto cfg = tiny_config();
  const auto a = train<float>(cfg);
  const auto b = train<float>(cfg);
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
    EXPECT_NEAR(a.log.epochs[e].val_loss, b.log.epochs[e].val_loss, 1e-6);
  }
}

TEST(Train, KeepsBestValidationEpoch) {
  auto cfg = tiny_config();
  cfg.epochs = 4;
  const auto res = train<double>(cfg);
  double best = res.log.epochs.front().val_loss;
  std::size_t at = 1;
  for (const auto &e : res.log.epochs) {
    if (e.val_loss < best) {
      best = e.val_loss;
      at = e.epoch;
    }
  }
  EXPECT_EQ(res.log.best_epoch, at);
  EXPECT_EQ(res.log.best_val_loss, best);
  // the returned weights reproduce the best validation loss
  std::vector<PreparedBatch<double>> val;
  for (const auto k : res.log.val_batches) {
    val.push_back(prepare_batch(cfg, res.model, k));
  }
  EXPECT_EQ(evaluate_loss(res.model, val), best);
}

TEST(Train, OverfitsASingleRepeatedBatch) {
  auto cfg = tiny_config();
  cfg.model.embed_dim = 24;
  cfg.model.depth = 2;
  cfg.data.noise_level = 0.0;
  BlockFormer<double> model{cfg.model, 3};
  cfg.batch_size = 8;
  const auto batch = prepare_batch(cfg, model, 0);
  AdamState<double> adam{};
  adam.lr = 5e-3;
  auto grads = Weights<double>::zeros(cfg.model);
  double loss = 1.0;
  std::size_t steps = 0;
  while (steps < 2000 && loss >= 1e-3) {
    loss = train_step(model, adam, grads, batch.input, batch.targets);
    ++steps;
  }
  EXPECT_LT(loss, 1e-3) << "after " << steps << " steps";
}

TEST(Train, RejectsInvalidConfig) {
  auto cfg = tiny_config();
  cfg.val_fraction = 1.0;
  EXPECT_THROW((void)train<double>(cfg), std::invalid_argument);
  cfg = tiny_config();
  cfg.epochs = 0;
  EXPECT_THROW((void)train<double>(cfg), std::invalid_argument);
}

TEST(TrainConfigText, RoundTripAndErrors) {
  auto cfg = tiny_config();
  cfg.lr = 3.25e-4;
  cfg.data.noise_level = 0.0;
  cfg.model.pos_encoding = PosEncoding::none;
  cfg.augment = true;
  const auto back = train_config_from_text(to_text(cfg));
  EXPECT_EQ(to_text(back), to_text(cfg));
  EXPECT_EQ(back.lr, cfg.lr);
  EXPECT_EQ(back.model.pos_encoding, PosEncoding::none);
  EXPECT_TRUE(back.augment);
  EXPECT_THROW((void)train_config_from_text("augment = 2\n"), std::invalid_argument);

  const auto over = train_config_from_text("epochs = 7\n# comment\n\ndepth = 3\n");
  EXPECT_EQ(over.epochs, 7U);
  EXPECT_EQ(over.model.depth, 3U);
  EXPECT_THROW((void)train_config_from_text("bogus = 1\n"), std::invalid_argument);
  EXPECT_THROW((void)train_config_from_text("epochs = seven\n"), std::invalid_argument);
  EXPECT_THROW((void)train_config_from_text("epochs\n"), std::invalid_argument);
}

TEST(Augment, ReordersBlocksAndMirrorsRealColumnsOnly) {
  for_all(20, 71, [](Gen &g, std::size_t) {
    TrainBatchSpec spec{};
    spec.min_chroms = 2;
    spec.max_chroms = 5;
    spec.max_length = 8e5;
    spec.batch_size = 4;
    const auto batch = generate_training_batch(spec, g.seed());
    const auto view = augment_rows(batch.rows, g.seed());
    ASSERT_EQ(view.size(), batch.rows.size());
    for (std::size_t m = 0; m < view.size(); ++m) {
      const auto &orig = batch.rows[m];
      const auto &aug = view[m];
      ASSERT_EQ(aug.blocks.size(), orig.blocks.size());
      EXPECT_EQ(aug.target, orig.target);
      Eigen::VectorXd profile_a = Eigen::VectorXd::Zero(orig.blocks.front().values.rows());
      Eigen::VectorXd profile_o = profile_a;
      for (std::size_t k = 0; k < aug.blocks.size(); ++k) {
        // same source order in every row of the batch
        EXPECT_EQ(aug.blocks[k].source, view.front().blocks[k].source);
        const auto &b = aug.blocks[k];
        const auto it = std::find_if(orig.blocks.begin(), orig.blocks.end(),
                                     [&](const RowBlock &o) { return o.source == b.source; });
        ASSERT_NE(it, orig.blocks.end());
        const auto w = static_cast<Eigen::Index>(orig.genome.bins(b.source));
        const Matrix mirrored = it->values.leftCols(w).rowwise().reverse();
        EXPECT_TRUE(b.values.leftCols(w) == it->values.leftCols(w) || b.values.leftCols(w) == mirrored);
        const auto pad = b.values.cols() - w;
        EXPECT_EQ(b.values.rightCols(pad), it->values.rightCols(pad));
        profile_a += b.values.rowwise().sum();
        profile_o += it->values.rowwise().sum();
      }
      EXPECT_LT((profile_a - profile_o).cwiseAbs().maxCoeff(), 1e-12);
    }
  });
}

TEST(Augment, TrainingStaysBitwiseReproducible) {
  auto cfg = tiny_config();
  cfg.augment = true;
  const auto a = train<double>(cfg);
  const auto b = train<double>(cfg);
  const auto plain = train<double>(tiny_config());
  EXPECT_EQ(a.log.epochs.back().train_loss, b.log.epochs.back().train_loss);
  EXPECT_NE(a.log.epochs.back().train_loss, plain.log.epochs.back().train_loss);
  EXPECT_EQ(a.log.initial_val_loss, plain.log.initial_val_loss);  // validation is never augmented
  const auto ta = a.model.weights().tensors();
  const auto tb = b.model.weights().tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(*ta[i], *tb[i]);
  }
}
