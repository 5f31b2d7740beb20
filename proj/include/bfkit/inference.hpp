#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/model.hpp"
#include "bfkit/normalize.hpp"
#include "bfkit/parallel.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

struct PreprocessOptions {
  bool ice{true};
  std::size_t border{0};  // trans-block border width set to zero (0 disables)
};

[[nodiscard]] inline ContactMap preprocess(const ContactMap &map, const PreprocessOptions &opts) {
  ContactMap out = opts.ice ? ice_normalize(map) : map;
  if (opts.border > 0) {
    out = zero_block_borders(out, opts.border);
  }
  return out;
}

// mean_i |theta_hat_i - theta_ref_i| / r
[[nodiscard]] inline double normalized_error(const std::vector<double> &estimate, const std::vector<double> &reference,
                                             std::uint64_t resolution) {
  if (estimate.size() != reference.size() || estimate.empty()) {
    throw std::invalid_argument("normalized error needs two non-empty vectors of equal length");
  }
  if (resolution == 0) {
    throw std::invalid_argument("resolution must be positive");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    s += std::abs(estimate[i] - reference[i]);
  }
  return s / static_cast<double>(estimate.size()) / static_cast<double>(resolution);
}

[[nodiscard]] inline double normalized_error(const ParamVector &estimate, const ParamVector &reference) {
  if (!(estimate.genome == reference.genome)) {
    throw std::invalid_argument("estimate and reference belong to different genomes");
  }
  return normalized_error(estimate.positions, reference.positions, estimate.genome.resolution());
}

namespace detail {

// Pearson correlation; nullopt when either side is constant.
template <typename A, typename B>
[[nodiscard]] std::optional<double> pearson(const A &a, const B &b) {
  const auto n = static_cast<double>(a.size());
  const double ma = a.sum() / n;
  const double mb = b.sum() / n;
  const auto ca = (a.array() - ma).eval();
  const auto cb = (b.array() - mb).eval();
  const double va = ca.square().sum();
  const double vb = cb.square().sum();
  if (!(va > 0.0) || !(vb > 0.0)) {
    return std::nullopt;
  }
  return (ca * cb).sum() / std::sqrt(va * vb);
}

}  // namespace detail

// Mean over upper trans-blocks of the mean row-wise Pearson correlation.
// Constant rows are skipped, as are blocks without a usable row.
[[nodiscard]] inline double mismatch_correlation(const ContactMap &a, const ContactMap &b) {
  if (!(a.genome == b.genome)) {
    throw std::invalid_argument("mismatch correlation needs maps over the same genome");
  }
  const auto &g = a.genome;
  double total = 0.0;
  std::size_t blocks = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = i + 1; j < g.size(); ++j) {
      const auto ba = a.block(i, j);
      const auto bb = b.block(i, j);
      double s = 0.0;
      std::size_t rows = 0;
      for (Eigen::Index r = 0; r < ba.rows(); ++r) {
        if (const auto c = detail::pearson(ba.row(r), bb.row(r))) {
          s += *c;
          ++rows;
        }
      }
      if (rows > 0) {
        total += s / static_cast<double>(rows);
        ++blocks;
      }
    }
  }
  if (blocks == 0) {
    throw std::domain_error("mismatch correlation undefined: every row is constant");
  }
  return total / static_cast<double>(blocks);
}

struct EstimateOptions {
  std::size_t k{0};  // blocks per subset, 0 uses every block
  std::size_t repeats{10};
  std::uint64_t seed{0};
};

// Per chromosome: `repeats` random k-subsets of its trans-row, each
// normalized and predicted, averaged. Chromosomes are independent.
template <typename T>
[[nodiscard]] ParamVector estimate(const ContactMap &map, const BlockFormer<T> &model, const EstimateOptions &opts) {
  const auto &g = map.genome;
  if (g.size() < 2) {
    throw std::invalid_argument("estimation needs at least 2 chromosomes");
  }
  const auto available = g.size() - 1;
  const auto k = opts.k == 0 ? available : opts.k;
  if (k > available) {
    throw std::out_of_range("k = " + std::to_string(k) + " exceeds the " + std::to_string(available) +
                            " available blocks");
  }
  if (opts.repeats == 0) {
    throw std::invalid_argument("repeats must be positive");
  }
  std::vector<double> theta(g.size());
  parallel_for(g.size(), [&](std::size_t i) {
    const auto row = extract_trans_row(map, i);
    // the full subset is the same every time
    const auto reps = k == available ? std::size_t{1} : opts.repeats;
    double s = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto sub = subsample_blocks(row, k, derive_seed(opts.seed, {i, r}));
      s += model.predict(prepare_row(sub, model.config()));
    }
    theta[i] = s / static_cast<double>(reps);
  });
  return ParamVector{g, std::move(theta)};
}

struct FitOptions {
  std::size_t window_bins{6};
  int max_iters{500};
  int passes{3};
  double init_width{std::sqrt(2.0)};
  double min_width{0.05};
  double tol{1e-12};
};

struct FitResult {
  ParamVector theta{};
  double width{};
  double objective{};
  std::vector<std::vector<double>> objective_trace{};  // accepted iterates, per window pass
  int iterations{};
  bool converged{};
};

namespace detail {

struct FitWindow {
  std::size_t i{}, j{};
  Eigen::Index r0{}, r1{}, c0{}, c1{};  // half-open ranges inside the block
};

// Reduced objective (amplitudes solved in closed form, a >= 0) and its
// gradient w.r.t. centers mu (bins) and width s.
struct FitEval {
  double value{};
  std::vector<double> grad_mu{};
  double grad_s{};
  std::vector<double> amplitude{};
};

[[nodiscard]] inline FitEval fit_objective(const ContactMap &map, const std::vector<FitWindow> &windows,
                                           const std::vector<double> &mu, double s, bool with_grad) {
  FitEval ev{};
  ev.grad_mu.assign(mu.size(), 0.0);
  const double inv2s2 = 1.0 / (2.0 * s * s);
  for (const auto &w : windows) {
    const auto blk = map.block(w.i, w.j);
    double cg = 0.0;
    double gg = 0.0;
    double cc = 0.0;
    for (Eigen::Index x = w.r0; x < w.r1; ++x) {
      const double dx = static_cast<double>(x) - mu[w.i];
      for (Eigen::Index y = w.c0; y < w.c1; ++y) {
        const double c = blk(x, y);
        if (c == 0.0) {
          continue;  // missing pixel
        }
        const double dy = static_cast<double>(y) - mu[w.j];
        const double gv = std::exp(-(dx * dx + dy * dy) * inv2s2);
        cg += c * gv;
        gg += gv * gv;
        cc += c * c;
      }
    }
    const double a = gg > 0.0 ? std::max(0.0, cg / gg) : 0.0;
    ev.amplitude.push_back(a);
    ev.value += cc - 2.0 * a * cg + a * a * gg;
    if (!with_grad || a == 0.0) {
      continue;
    }
    for (Eigen::Index x = w.r0; x < w.r1; ++x) {
      const double dx = static_cast<double>(x) - mu[w.i];
      for (Eigen::Index y = w.c0; y < w.c1; ++y) {
        const double c = blk(x, y);
        if (c == 0.0) {
          continue;
        }
        const double dy = static_cast<double>(y) - mu[w.j];
        const double gv = std::exp(-(dx * dx + dy * dy) * inv2s2);
        const double res = c - a * gv;
        // d/dp (c - a g)^2 = -2 res a dg/dp
        const double common = -2.0 * res * a * gv;
        ev.grad_mu[w.i] += common * dx / (s * s);
        ev.grad_mu[w.j] += common * dy / (s * s);
        ev.grad_s += common * (dx * dx + dy * dy) / (s * s * s);
      }
    }
  }
  return ev;
}

[[nodiscard]] inline std::vector<FitWindow> fit_windows(const Genome &g, const std::vector<double> &mu,
                                                        std::size_t half) {
  std::vector<FitWindow> ws;
  const auto h = static_cast<Eigen::Index>(half);
  auto range = [&](std::size_t chrom) {
    const auto n = static_cast<Eigen::Index>(g.bins(chrom));
    const auto c = static_cast<Eigen::Index>(std::llround(mu[chrom]));
    return std::pair{std::max<Eigen::Index>(0, c - h), std::min(n, c + h + 1)};
  };
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = i + 1; j < g.size(); ++j) {
      const auto [r0, r1] = range(i);
      const auto [c0, c1] = range(j);
      ws.push_back({i, j, r0, r1, c0, c1});
    }
  }
  return ws;
}

}  // namespace detail

// Joint least-squares fit of one Gaussian per upper trans-block with shared
// width, centers constrained to [1, l_i - 1] bp. Projected gradient descent
// with Barzilai-Borwein steps and Armijo backtracking; windows of
// +-window_bins around the current centers, re-centered between passes.
[[nodiscard]] inline FitResult gaussian_fit_refine(const ContactMap &map, const ParamVector &init,
                                                   const FitOptions &opts = {}) {
  const auto &g = map.genome;
  if (!(init.genome == g)) {
    throw std::invalid_argument("initial parameters belong to a different genome");
  }
  init.validate();
  const auto n = g.size();
  const auto r = static_cast<double>(g.resolution());
  // the minimizer is invariant to a global scale; unit peak keeps steps sane
  ContactMap scaled = map;
  if (const double mx = scaled.values.maxCoeff(); mx > 0.0) {
    scaled.values /= mx;
  }
  std::vector<double> lo(n);
  std::vector<double> hi(n);
  std::vector<double> mu(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = 1.0 / r;
    hi[i] = (static_cast<double>(g.length(i)) - 1.0) / r;
    mu[i] = std::clamp(init.positions[i] / r, lo[i], hi[i]);
  }
  double s = std::max(opts.init_width, opts.min_width);
  FitResult res{};
  res.converged = true;
  auto project = [&](std::vector<double> &m, double &w) {
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = std::clamp(m[i], lo[i], hi[i]);
    }
    w = std::max(w, opts.min_width);
  };
  for (int pass = 0; pass < std::max(1, opts.passes); ++pass) {
    const auto windows = detail::fit_windows(g, mu, opts.window_bins);
    auto ev = detail::fit_objective(scaled, windows, mu, s, true);
    std::vector<double> trace{ev.value};
    double step = 1.0 / std::max(1.0, ev.value);
    bool pass_converged = false;
    std::vector<double> prev_x;
    std::vector<double> prev_g;
    for (int it = 0; it < opts.max_iters; ++it) {
      ++res.iterations;
      std::vector<double> x(mu);
      x.push_back(s);
      std::vector<double> grad(ev.grad_mu);
      grad.push_back(ev.grad_s);
      if (!prev_x.empty()) {
        double sy = 0.0;
        double ss = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double dx = x[k] - prev_x[k];
          const double dg = grad[k] - prev_g[k];
          sy += dx * dg;
          ss += dx * dx;
        }
        if (sy > 0.0 && ss > 0.0) {
          step = ss / sy;
        }
      }
      bool accepted = false;
      std::vector<double> nmu;
      double ns = s;
      detail::FitEval nev;
      for (int bt = 0; bt < 60; ++bt) {
        nmu.assign(mu.begin(), mu.end());
        for (std::size_t i = 0; i < n; ++i) {
          nmu[i] -= step * grad[i];
        }
        ns = s - step * grad[n];
        project(nmu, ns);
        double decrease = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          decrease += grad[i] * (mu[i] - nmu[i]);
        }
        decrease += grad[n] * (s - ns);
        nev = detail::fit_objective(scaled, windows, nmu, ns, true);
        if (nev.value <= ev.value - 1e-4 * decrease) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        pass_converged = true;  // no descent direction left at machine precision
        break;
      }
      double move = std::abs(ns - s);
      for (std::size_t i = 0; i < n; ++i) {
        move = std::max(move, std::abs(nmu[i] - mu[i]));
      }
      const double rel = (ev.value - nev.value) / std::max(ev.value, std::numeric_limits<double>::min());
      prev_x = std::move(x);
      prev_g = std::move(grad);
      mu = std::move(nmu);
      s = ns;
      ev = std::move(nev);
      trace.push_back(ev.value);
      if (move < 1e-9 || rel < opts.tol) {
        pass_converged = true;
        break;
      }
    }
    res.objective_trace.push_back(std::move(trace));
    res.objective = ev.value;
    res.converged = pass_converged;
    // stop once the windows no longer move
    const auto next = detail::fit_windows(g, mu, opts.window_bins);
    bool same = true;
    for (std::size_t w = 0; w < next.size(); ++w) {
      same = same && next[w].r0 == windows[w].r0 && next[w].c0 == windows[w].c0 && next[w].r1 == windows[w].r1 &&
             next[w].c1 == windows[w].c1;
    }
    if (same) {
      break;
    }
  }
  std::vector<double> theta(n);
  for (std::size_t i = 0; i < n; ++i) {
    theta[i] = mu[i] * r;
  }
  res.theta = ParamVector{g, std::move(theta)};
  res.width = s;
  return res;
}

struct MultiresOptions {
  std::size_t coarse_factor{10};
  std::size_t window{60};  // maximal crop side in fine bins
  std::size_t border{1};   // coarse-map border zeroing
  EstimateOptions estimate{};
};

struct MultiresResult {
  ParamVector coarse{};
  ParamVector refined{};
};

namespace detail {

// Start of a crop of at most `window` bins centered on `center` (bins), clipped to [0, bins).
[[nodiscard]] inline std::pair<Eigen::Index, Eigen::Index> crop_range(double center, std::size_t bins,
                                                                      std::size_t window) {
  const auto n = static_cast<Eigen::Index>(bins);
  const auto w = std::min(static_cast<Eigen::Index>(window), n);
  const auto start = static_cast<Eigen::Index>(std::llround(center)) - w / 2;
  const auto s = std::clamp<Eigen::Index>(start, 0, n - w);
  return {s, w};
}

}  // namespace detail

// Stage 1 estimates on a downsampled map with zeroed block borders; stage 2
// crops windows around the coarse estimate in the fine map and re-estimates.
template <typename T>
[[nodiscard]] MultiresResult multires_refine(const ContactMap &fine, const BlockFormer<T> &model,
                                             const MultiresOptions &opts = {}) {
  const auto &g = fine.genome;
  const auto coarse_map = zero_block_borders(downsample(fine, opts.coarse_factor), opts.border);
  MultiresResult res{};
  res.coarse = estimate(coarse_map, model, opts.estimate);
  const auto r = static_cast<double>(g.resolution());
  std::vector<std::pair<Eigen::Index, Eigen::Index>> crops(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double c = res.coarse.positions[i];
    if (!(c > 0.0 && c < static_cast<double>(g.length(i)))) {
      throw std::logic_error("coarse estimate left chromosome " + std::to_string(i));
    }
    crops[i] = detail::crop_range(c / r, g.bins(i), opts.window);
  }
  std::vector<double> theta(g.size());
  parallel_for(g.size(), [&](std::size_t i) {
    const auto [ri, ni] = crops[i];
    std::vector<std::uint64_t> lengths;
    for (std::size_t j = 0; j < g.size(); ++j) {
      lengths.push_back(static_cast<std::uint64_t>(crops[j].second) * g.resolution());
    }
    const auto full = extract_trans_row(fine, i);
    TransRow row{Genome{lengths, g.resolution(), g.names()}, i, {}};
    for (const auto &b : full.blocks) {
      const auto [cj, nj] = crops[b.source];
      row.blocks.push_back({b.source, Matrix(b.values.block(ri, cj, ni, nj))});
    }
    const auto k = opts.estimate.k == 0 ? row.blocks.size() : opts.estimate.k;
    const auto reps = k == row.blocks.size() ? std::size_t{1} : opts.estimate.repeats;
    double s = 0.0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const auto sub = subsample_blocks(row, k, derive_seed(opts.estimate.seed, {0x5EC0, i, rep}));
      s += model.predict(prepare_row(sub, model.config()));
    }
    theta[i] = static_cast<double>(ri) * r + s / static_cast<double>(reps);
  });
  res.refined = ParamVector{g, std::move(theta)};
  return res;
}

struct EstimateReport {
  std::vector<std::string> names{};
  std::vector<double> theta{};
  std::vector<double> abs_error{};  // empty without a reference
  std::optional<double> normalized_error{};
  double wallclock{};
  std::string method{};
};

[[nodiscard]] inline EstimateReport make_report(const ParamVector &estimate, const std::optional<ParamVector> &ref,
                                                double wallclock, std::string method) {
  EstimateReport rep{};
  rep.names = estimate.genome.names();
  rep.theta = estimate.positions;
  rep.wallclock = wallclock;
  rep.method = std::move(method);
  if (ref) {
    for (std::size_t i = 0; i < estimate.positions.size(); ++i) {
      rep.abs_error.push_back(std::abs(estimate.positions[i] - ref->positions[i]));
    }
    rep.normalized_error = normalized_error(estimate, *ref);
  }
  return rep;
}

}  // namespace bfkit
