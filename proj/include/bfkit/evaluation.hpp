#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "bfkit/model.hpp"
#include "bfkit/rng.hpp"
#include "bfkit/simulator.hpp"

namespace bfkit {

struct ErrorStats {
  std::size_t n{};
  double mean{};
  double std{};  // population
  double median{};
  double ci_lo{};  // 2.5th percentile
  double ci_hi{};  // 97.5th percentile
};

// Linear interpolation between order statistics of a sorted sample.
[[nodiscard]] inline double sorted_percentile(const std::vector<double> &sorted, double q) {
  if (sorted.empty()) {
    throw std::invalid_argument("percentile of an empty sample");
  }
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

[[nodiscard]] inline ErrorStats error_stats(std::vector<double> v) {
  if (v.empty()) {
    throw std::invalid_argument("statistics of an empty sample");
  }
  ErrorStats s{};
  s.n = v.size();
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (const auto x : v) {
    ss += (x - s.mean) * (x - s.mean);
  }
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  std::sort(v.begin(), v.end());
  s.median = sorted_percentile(v, 50.0);
  s.ci_lo = sorted_percentile(v, 2.5);
  s.ci_hi = sorted_percentile(v, 97.5);
  return s;
}

struct HeldoutSpec {
  std::size_t blocks{1};
  std::size_t maps{100};
  double min_length{2e5};
  double max_length{2e6};
  std::uint64_t resolution{32'000};
  double noise_level{0.10};
  std::uint64_t seed{0};
};

// Normalized errors |theta_hat - theta| / r on fresh synthetic maps, one
// genome of blocks + 1 chromosomes per map.
template <typename T>
[[nodiscard]] std::vector<double> heldout_errors(const BlockFormer<T> &model, const HeldoutSpec &spec) {
  TrainBatchSpec data{};
  data.chrom_counts = {spec.blocks + 1};
  data.min_length = spec.min_length;
  data.max_length = spec.max_length;
  data.resolution = spec.resolution;
  data.noise_level = spec.noise_level;
  data.batch_size = 1;
  data.patch_size = model.config().pos_encoding == PosEncoding::pos2d_pad ? 1 : model.config().patch_size;
  std::vector<double> err(spec.maps);
  for (std::size_t m = 0; m < spec.maps; ++m) {
    const auto b = generate_training_batch(data, derive_seed(spec.seed, {spec.blocks, m}), 1);
    const double l = static_cast<double>(b.genome.length(b.target));
    const double u = static_cast<double>(model.predict_normalized(b.rows.front()));
    err[m] = std::abs(u - b.targets.front()) * l / static_cast<double>(spec.resolution);
  }
  return err;
}

}  // namespace bfkit
