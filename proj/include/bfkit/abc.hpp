#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/model.hpp"
#include "bfkit/parallel.hpp"
#include "bfkit/rng.hpp"
#include "bfkit/simulator.hpp"

namespace bfkit {

enum class AbcCriterion { pearson, summary_l2 };

[[nodiscard]] inline std::string to_string(AbcCriterion c) {
  return c == AbcCriterion::pearson ? "pearson" : "summary";
}

[[nodiscard]] inline AbcCriterion parse_abc_criterion(const std::string &s) {
  if (s == "pearson") return AbcCriterion::pearson;
  if (s == "summary" || s == "summary_l2") return AbcCriterion::summary_l2;
  throw std::invalid_argument("unknown ABC criterion '" + s + "' (expected pearson or summary)");
}

struct AbcConfig {
  std::size_t rounds{3};
  std::size_t population{2000};
  double acceptance{0.05};
  double kernel_std{-1.0};  // bp; negative means one bin
  AbcCriterion criterion{AbcCriterion::pearson};
  double noise_level{0.10};
  std::uint64_t seed{0};
  std::size_t batch{64};  // rows per model call in the summary variant

  [[nodiscard]] std::size_t survivors() const {
    return static_cast<std::size_t>(std::llround(acceptance * static_cast<double>(population)));
  }

  [[nodiscard]] double kernel(const Genome &g) const {
    return kernel_std > 0.0 ? kernel_std : static_cast<double>(g.resolution());
  }

  void validate() const {
    if (rounds == 0) {
      throw std::invalid_argument("ABC needs at least one round");
    }
    if (!(acceptance > 0.0 && acceptance <= 1.0)) {
      throw std::invalid_argument("acceptance rate must lie in (0, 1]");
    }
    if (survivors() < 10) {
      throw std::invalid_argument("population " + std::to_string(population) + " keeps only " +
                                  std::to_string(survivors()) + " particles; at least 10 are required");
    }
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) {
      throw std::invalid_argument("noise level must lie in [0, 1]");
    }
    if (batch == 0) {
      throw std::invalid_argument("batch must be positive");
    }
  }
};

struct WeightedPopulation {
  std::vector<double> particles{};  // bp
  std::vector<double> weights{};    // sum to 1
  std::vector<double> scores{};     // criterion values of the survivors
  std::size_t round{};

  [[nodiscard]] double mean() const {
    return std::accumulate(particles.begin(), particles.end(), 0.0) / static_cast<double>(particles.size());
  }
  [[nodiscard]] double weighted_mean() const {
    double s = 0.0;
    for (std::size_t m = 0; m < particles.size(); ++m) {
      s += weights[m] * particles[m];
    }
    return s;
  }
  [[nodiscard]] double weighted_std() const {
    const double mu = weighted_mean();
    double s = 0.0;
    for (std::size_t m = 0; m < particles.size(); ++m) {
      s += weights[m] * (particles[m] - mu) * (particles[m] - mu);
    }
    return std::sqrt(s);
  }
};

struct AbcResult {
  std::size_t chromosome{};
  std::vector<WeightedPopulation> rounds{};

  [[nodiscard]] const WeightedPopulation &final() const { return rounds.back(); }
};

// Mean over blocks of the Pearson correlation of the vectorized blocks.
// Constant blocks are skipped.
[[nodiscard]] inline double pearson_criterion(const TransRow &c, const TransRow &ref) {
  if (c.blocks.size() != ref.blocks.size()) {
    throw std::invalid_argument("rows differ in block count");
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t b = 0; b < c.blocks.size(); ++b) {
    const auto &x = c.blocks[b].values;
    const auto &y = ref.blocks[b].values;
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
      throw std::invalid_argument("block " + std::to_string(b) + " shape differs: " + std::to_string(x.rows()) +
                                  "x" + std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" +
                                  std::to_string(y.cols()));
    }
    const auto n = static_cast<double>(x.size());
    const double mx = x.sum() / n;
    const double my = y.sum() / n;
    const auto cx = (x.array() - mx).eval();
    const auto cy = (y.array() - my).eval();
    const double vx = cx.square().sum();
    const double vy = cy.square().sum();
    if (!(vx > 0.0) || !(vy > 0.0)) {
      continue;
    }
    total += std::clamp((cx * cy).sum() / std::sqrt(vx * vy), -1.0, 1.0);
    ++used;
  }
  if (used == 0) {
    throw std::domain_error("Pearson criterion undefined: every block is constant");
  }
  return total / static_cast<double>(used);
}

// Simulates the trans-row of `target` for a given position of it.
using RowSimulator = std::function<TransRow(double theta, std::uint64_t seed)>;

// Other positions and spot parameters are redrawn from their priors per call.
[[nodiscard]] inline RowSimulator marginal_simulator(const Genome &genome, std::size_t target, double noise_level) {
  if (target >= genome.size()) {
    throw std::out_of_range("target chromosome out of range");
  }
  return [genome, target, noise_level](double theta, std::uint64_t seed) {
    auto rng = make_engine(seed, {0});
    SimConfig cfg{};
    sample_spot_priors(cfg, rng);
    cfg.noise_level = noise_level;
    cfg.seed = derive_seed(seed, {1});
    auto p = sample_prior(genome, rng);
    p.positions[target] = theta;
    return simulate_trans_row(genome, p, cfg, target);
  };
}

// Scores a set of simulated rows; larger is better.
using RowScorer = std::function<std::vector<double>(const std::vector<TransRow> &)>;

namespace detail {

[[nodiscard]] inline std::vector<std::size_t> best_indices(const std::vector<double> &score, std::size_t m) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  idx.resize(m);
  return idx;
}

// w_m = p(theta_m) / sum_k w_k K(theta_m; theta_k), in log space.
[[nodiscard]] inline std::vector<double> smc_weights(const std::vector<double> &theta,
                                                     const WeightedPopulation &prev, double sigma,
                                                     double prior_density) {
  std::vector<double> logw(theta.size());
  std::vector<double> terms(prev.particles.size());
  for (std::size_t m = 0; m < theta.size(); ++m) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < prev.particles.size(); ++k) {
      const double z = (theta[m] - prev.particles[k]) / sigma;
      terms[k] = prev.weights[k] > 0.0 ? std::log(prev.weights[k]) - 0.5 * z * z
                                        : -std::numeric_limits<double>::infinity();
      hi = std::max(hi, terms[k]);
    }
    double s = 0.0;
    for (const auto t : terms) {
      s += std::exp(t - hi);
    }
    // the Gaussian normalizer is shared by every particle and cancels
    logw[m] = std::log(prior_density) - (hi + std::log(s));
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w(theta.size());
  double total = 0.0;
  for (std::size_t m = 0; m < w.size(); ++m) {
    w[m] = std::isfinite(logw[m]) ? std::exp(logw[m] - top) : 0.0;
    total += w[m];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw std::runtime_error("degenerate ABC weights at round " + std::to_string(prev.round + 1));
  }
  for (auto &x : w) {
    x /= total;
  }
  return w;
}

}  // namespace detail

// Sequential Monte Carlo ABC over theta_target with a uniform prior on (1, l - 1).
[[nodiscard]] inline AbcResult smc_abc(const Genome &genome, std::size_t target, const AbcConfig &cfg,
                                       const RowSimulator &simulate_fn, const RowScorer &score_fn) {
  cfg.validate();
  if (target >= genome.size()) {
    throw std::out_of_range("target chromosome out of range");
  }
  const double lo = 1.0;
  const double hi = static_cast<double>(genome.length(target)) - 1.0;
  const double sigma = cfg.kernel(genome);
  const double prior_density = 1.0 / (hi - lo);
  const auto n = cfg.population;
  const auto m = cfg.survivors();
  AbcResult out{};
  out.chromosome = target;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    std::vector<double> theta(n);
    std::vector<TransRow> rows(n);
    const WeightedPopulation *prev = t == 0 ? nullptr : &out.rounds.back();
    // M sources drawn once with replacement; particle i perturbs source i mod M
    std::vector<double> sources;
    if (prev != nullptr) {
      auto rng = make_engine(cfg.seed, {t, 0x5A3D1EULL});
      std::discrete_distribution<std::size_t> pick(prev->weights.begin(), prev->weights.end());
      for (std::size_t k = 0; k < m; ++k) {
        sources.push_back(prev->particles[pick(rng)]);
      }
    }
    parallel_for(n, [&](std::size_t i) {
      auto rng = make_engine(cfg.seed, {t, i});
      if (prev == nullptr) {
        theta[i] = uniform(rng, lo, hi);
      } else {
        const double source = sources[i % m];
        const double moved = source + sigma * std::normal_distribution<double>{}(rng);
        theta[i] = moved > lo && moved < hi ? moved : source;
      }
      rows[i] = simulate_fn(theta[i], derive_seed(cfg.seed, {t, i, 1}));
    });
    const auto score = score_fn(rows);
    if (score.size() != n) {
      throw std::logic_error("scorer returned " + std::to_string(score.size()) + " values for " +
                             std::to_string(n) + " rows");
    }
    const auto keep = detail::best_indices(score, m);
    WeightedPopulation pop{};
    pop.round = t;
    for (const auto k : keep) {
      pop.particles.push_back(theta[k]);
      pop.scores.push_back(score[k]);
    }
    if (prev == nullptr) {
      pop.weights.assign(m, 1.0 / static_cast<double>(m));
    } else {
      pop.weights = detail::smc_weights(pop.particles, *prev, sigma, prior_density);
    }
    out.rounds.push_back(std::move(pop));
  }
  return out;
}

[[nodiscard]] inline RowScorer pearson_scorer(const TransRow &ref) {
  return [ref](const std::vector<TransRow> &rows) {
    std::vector<double> s(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) { s[i] = pearson_criterion(rows[i], ref); });
    return s;
  };
}

// Negated distance between normalized predictions, so larger is better.
template <typename T>
[[nodiscard]] RowScorer summary_scorer(const TransRow &ref, const BlockFormer<T> &model, std::size_t batch) {
  const double s_ref = static_cast<double>(model.predict_normalized(prepare_row(ref, model.config())));
  return [&model, s_ref, batch](const std::vector<TransRow> &rows) {
    std::vector<double> s(rows.size());
    const auto chunks = (rows.size() + batch - 1) / batch;
    parallel_for(chunks, [&](std::size_t c) {
      const auto begin = c * batch;
      const auto end = std::min(rows.size(), begin + batch);
      std::vector<TransRow> prepared;
      prepared.reserve(end - begin);
      for (auto i = begin; i < end; ++i) {
        prepared.push_back(prepare_row(rows[i], model.config()));
      }
      std::vector<const TransRow *> ptrs;
      for (const auto &r : prepared) {
        ptrs.push_back(&r);
      }
      const auto u = model.forward(model.make_input(ptrs));
      for (auto i = begin; i < end; ++i) {
        s[i] = -std::abs(static_cast<double>(u[i - begin]) - s_ref);
      }
    });
    return s;
  };
}

// Marginal posterior of chromosome `target` in `ref_map` with the criterion from cfg.
template <typename T>
[[nodiscard]] AbcResult run_abc(const ContactMap &ref_map, std::size_t target, const AbcConfig &cfg,
                                const BlockFormer<T> *model) {
  const auto ref = extract_trans_row(ref_map, target);
  const auto sim = marginal_simulator(ref_map.genome, target, cfg.noise_level);
  if (cfg.criterion == AbcCriterion::pearson) {
    return smc_abc(ref_map.genome, target, cfg, sim, pearson_scorer(ref));
  }
  if (model == nullptr) {
    throw std::invalid_argument("the summary criterion needs a trained model");
  }
  return smc_abc(ref_map.genome, target, cfg, sim, summary_scorer(ref, *model, cfg.batch));
}

}  // namespace bfkit
