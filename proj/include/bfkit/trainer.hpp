#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/model.hpp"
#include "bfkit/optim.hpp"
#include "bfkit/rng.hpp"
#include "bfkit/simulator.hpp"

namespace bfkit {

// Mean squared error (1/M) sum (u - target)^2.
template <typename T>
[[nodiscard]] double mse_loss(const std::vector<T> &u, const std::vector<double> &targets) {
  if (u.empty()) {
    throw std::invalid_argument("loss of an empty batch");
  }
  if (u.size() != targets.size()) {
    throw std::invalid_argument("loss: " + std::to_string(u.size()) + " predictions for " +
                                std::to_string(targets.size()) + " targets");
  }
  double s = 0.0;
  for (std::size_t m = 0; m < u.size(); ++m) {
    const double e = static_cast<double>(u[m]) - targets[m];
    s += e * e;
  }
  return s / static_cast<double>(u.size());
}

struct TrainConfig {
  std::size_t total_samples{5000};
  std::size_t batch_size{200};
  std::size_t epochs{50};
  double val_fraction{0.10};
  double lr{5e-4};
  std::uint64_t seed{0};
  ModelConfig model{};
  TrainBatchSpec data{};                        // batch_size and patch_size are overridden
  std::size_t memory_budget{256ULL << 20U};     // bytes of activations per micro-batch
  // Redraws label-preserving views of every training batch each epoch:
  // source blocks reordered and their columns mirrored. The target axis is untouched.
  bool augment{false};

  [[nodiscard]] std::size_t batch_count() const { return (total_samples + batch_size - 1) / batch_size; }
  [[nodiscard]] std::size_t val_batches() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(batch_count()) *
                                                                          val_fraction)));
  }

  void validate() const {
    model.validate();
    if (total_samples == 0 || batch_size == 0 || epochs == 0) {
      throw std::invalid_argument("samples, batch size and epochs must be positive");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
      throw std::invalid_argument("val_fraction must lie in (0, 1)");
    }
    if (batch_count() < 2) {
      throw std::invalid_argument("need at least 2 batches to split training and validation");
    }
    if (val_batches() >= batch_count()) {
      throw std::invalid_argument("validation split leaves no training batch");
    }
    if (!(lr > 0.0)) {
      throw std::invalid_argument("learning rate must be positive");
    }
  }
};

template <typename T>
struct PreparedBatch {
  std::size_t index{};
  std::uint64_t seed{};
  ModelInput<T> input{};
  std::vector<double> targets{};
  std::vector<TransRow> rows{};  // kept only when the batch is augmented
};

struct EpochRecord {
  std::size_t epoch{};
  double train_loss{};
  double val_loss{};
  double wallclock{};  // seconds since training started
};

struct TrainLog {
  double initial_val_loss{};
  std::vector<EpochRecord> epochs{};
  std::size_t best_epoch{};
  double best_val_loss{};
  std::vector<std::size_t> train_batches{};
  std::vector<std::size_t> val_batches{};
};

template <typename T>
struct TrainResult {
  BlockFormer<T> model{};
  TrainLog log{};
};

[[nodiscard]] inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, {0xDA7AULL, index});
}

// One block order for the whole batch (members must share structure), then
// an independent coin per row and block for mirroring the real columns;
// padding stays on the right.
[[nodiscard]] inline std::vector<TransRow> augment_rows(const std::vector<TransRow> &rows, std::uint64_t seed) {
  auto rng = make_engine(seed, {0});
  std::vector<std::size_t> order(rows.empty() ? 0 : rows.front().blocks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TransRow> out;
  out.reserve(rows.size());
  for (const auto &row : rows) {
    TransRow r{row.genome, row.target, {}};
    for (const auto k : order) {
      auto b = row.blocks[k];
      const auto w = static_cast<Eigen::Index>(row.genome.bins(b.source));
      if (uniform_int(rng, 0, 1) == 1) {
        b.values.leftCols(w) = b.values.leftCols(w).rowwise().reverse().eval();
      }
      r.blocks.push_back(std::move(b));
    }
    out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
[[nodiscard]] PreparedBatch<T> prepare_batch(const TrainConfig &cfg, const BlockFormer<T> &model,
                                             std::size_t index, bool keep_rows = false) {
  auto spec = cfg.data;
  spec.batch_size = cfg.batch_size;
  spec.patch_size = cfg.model.pos_encoding == PosEncoding::pos2d_pad ? 1 : cfg.model.patch_size;
  const auto count = std::min(cfg.batch_size, cfg.total_samples - index * cfg.batch_size);
  const auto seed = batch_seed(cfg.seed, index);
  const auto b = generate_training_batch(spec, seed, count);
  std::vector<const TransRow *> rows;
  rows.reserve(b.rows.size());
  for (const auto &r : b.rows) {
    rows.push_back(&r);
  }
  if (keep_rows) {
    return {index, seed, {}, b.targets, std::move(b.rows)};
  }
  return {index, seed, model.make_input(rows), b.targets, {}};
}

namespace detail {

template <typename T>
[[nodiscard]] ModelInput<T> input_of(const BlockFormer<T> &model, const std::vector<TransRow> &rows) {
  std::vector<const TransRow *> ptrs;
  ptrs.reserve(rows.size());
  for (const auto &r : rows) {
    ptrs.push_back(&r);
  }
  return model.make_input(ptrs);
}

template <typename T>
[[nodiscard]] ModelInput<T> slice_input(const ModelInput<T> &in, Eigen::Index begin, Eigen::Index count) {
  ModelInput<T> out{};
  out.samples = count;
  out.tokens = in.tokens;
  out.patches = in.patches.middleRows(begin * in.tokens, count * in.tokens);
  out.pos = in.pos;
  return out;
}

template <typename T>
[[nodiscard]] Eigen::Index micro_batch(const BlockFormer<T> &model, const ModelInput<T> &in, std::size_t budget) {
  const auto per = std::max<std::size_t>(1, model.cache_bytes_per_sample(in.tokens));
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(budget / per), 1, in.samples);
}

}  // namespace detail

template <typename T>
[[nodiscard]] std::vector<T> predict_batch(const BlockFormer<T> &model, const ModelInput<T> &in,
                                           std::size_t budget = 256ULL << 20U) {
  std::vector<T> u;
  u.reserve(static_cast<std::size_t>(in.samples));
  // no cache, so chunks only bound the token matrices
  const auto mb = std::max<Eigen::Index>(detail::micro_batch(model, in, budget) * 4, 1);
  for (Eigen::Index b = 0; b < in.samples; b += mb) {
    const auto n = std::min(mb, in.samples - b);
    const auto part = model.forward(detail::slice_input(in, b, n));
    u.insert(u.end(), part.begin(), part.end());
  }
  return u;
}

// One optimizer step on a full batch; returns the batch loss before the update.
template <typename T>
double train_step(BlockFormer<T> &model, AdamState<T> &adam, Weights<T> &grads, const ModelInput<T> &in,
                  const std::vector<double> &targets, std::size_t budget = 256ULL << 20U) {
  grads.set_zero();
  const auto mb = detail::micro_batch(model, in, budget);
  const auto total = static_cast<double>(in.samples);
  double loss = 0.0;
  ForwardCache<T> cache{};
  for (Eigen::Index b = 0; b < in.samples; b += mb) {
    const auto n = std::min(mb, in.samples - b);
    const auto part = detail::slice_input(in, b, n);
    const auto u = model.forward(part, &cache);
    std::vector<T> du(u.size());
    for (std::size_t m = 0; m < u.size(); ++m) {
      const double e = static_cast<double>(u[m]) - targets[static_cast<std::size_t>(b) + m];
      loss += e * e;
      du[m] = static_cast<T>(2.0 * e / total);
    }
    model.backward(part, cache, du, grads);
  }
  loss /= total;
  const auto g = grads.tensors();
  adam_step(model.weights().tensors(), std::vector<const Mat<T> *>(g.begin(), g.end()), adam,
            model.weights().names());
  return loss;
}

template <typename T>
[[nodiscard]] double evaluate_loss(const BlockFormer<T> &model, const std::vector<PreparedBatch<T>> &batches,
                                   std::size_t budget = 256ULL << 20U) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto &b : batches) {
    const auto u = predict_batch(model, b.input, budget);
    s += mse_loss(u, b.targets) * static_cast<double>(u.size());
    n += u.size();
  }
  return s / static_cast<double>(n);
}

// The dataset is generated once; the last val_batches() batches validate.
// Returns the weights of the epoch with the lowest validation loss (earliest on ties).
template <typename T>
[[nodiscard]] TrainResult<T> train(const TrainConfig &cfg,
                                   const std::function<void(const EpochRecord &)> &on_epoch = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  BlockFormer<T> model{cfg.model, derive_seed(cfg.seed, {1})};
  const auto nb = cfg.batch_count();
  const auto nv = cfg.val_batches();
  std::vector<PreparedBatch<T>> train_set;
  std::vector<PreparedBatch<T>> val_set;
  TrainLog log{};
  for (std::size_t k = 0; k < nb; ++k) {
    const bool is_train = k + nv < nb;
    auto b = prepare_batch(cfg, model, k, is_train && cfg.augment);
    if (is_train) {
      log.train_batches.push_back(k);
      train_set.push_back(std::move(b));
    } else {
      log.val_batches.push_back(k);
      val_set.push_back(std::move(b));
    }
  }
  AdamState<T> adam{};
  adam.lr = cfg.lr;
  auto grads = Weights<T>::zeros(cfg.model);
  log.initial_val_loss = evaluate_loss(model, val_set, cfg.memory_budget);
  log.best_val_loss = std::numeric_limits<double>::infinity();
  Weights<T> best = model.weights();
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_engine(cfg.seed, {2, e});
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    std::size_t train_n = 0;
    for (const auto idx : order) {
      const auto &b = train_set[idx];
      double loss = 0.0;
      try {
        if (cfg.augment) {
          const auto view = augment_rows(b.rows, derive_seed(cfg.seed, {3, e, idx}));
          loss = train_step(model, adam, grads, detail::input_of(model, view), b.targets, cfg.memory_budget);
        } else {
          loss = train_step(model, adam, grads, b.input, b.targets, cfg.memory_budget);
        }
      } catch (const NonFiniteGradient &err) {
        throw std::runtime_error(std::string("training diverged on batch seed ") + std::to_string(b.seed) + ": " +
                                 err.what());
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("training diverged (non-finite loss) on batch seed " + std::to_string(b.seed));
      }
      train_sum += loss * static_cast<double>(b.targets.size());
      train_n += b.targets.size();
    }
    EpochRecord rec{};
    rec.epoch = e;
    rec.train_loss = train_sum / static_cast<double>(train_n);
    rec.val_loss = evaluate_loss(model, val_set, cfg.memory_budget);
    rec.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.val_loss)) {
      throw std::runtime_error("validation loss became non-finite at epoch " + std::to_string(e));
    }
    if (rec.val_loss < log.best_val_loss) {
      log.best_val_loss = rec.val_loss;
      log.best_epoch = e;
      best = model.weights();
    }
    log.epochs.push_back(rec);
    if (on_epoch) {
      on_epoch(rec);
    }
  }
  return {BlockFormer<T>{cfg.model, std::move(best)}, std::move(log)};
}

}  // namespace bfkit
