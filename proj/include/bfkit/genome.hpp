#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bfkit/rng.hpp"

namespace bfkit {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Chromosome lengths in bp plus the bin size of the map.
class Genome {
 public:
  Genome() = default;
  Genome(std::vector<std::uint64_t> lengths, std::uint64_t resolution,
         std::vector<std::string> names = {})
      : _lengths(std::move(lengths)), _resolution(resolution), _names(std::move(names)) {
    if (_resolution == 0) {
      throw std::invalid_argument("genome resolution must be positive");
    }
    if (_lengths.empty()) {
      throw std::invalid_argument("genome must contain at least one chromosome");
    }
    for (std::size_t i = 0; i < _lengths.size(); ++i) {
      if (_lengths[i] < 2 * _resolution) {
        throw std::invalid_argument("chromosome " + std::to_string(i) + " spans fewer than 2 bins (length " +
                                    std::to_string(_lengths[i]) + " bp, resolution " +
                                    std::to_string(_resolution) + " bp)");
      }
    }
    if (_names.empty()) {
      for (std::size_t i = 0; i < _lengths.size(); ++i) {
        _names.push_back("chr" + std::to_string(i + 1));
      }
    } else if (_names.size() != _lengths.size()) {
      throw std::invalid_argument("chromosome names and lengths differ in count");
    }
    _offsets.resize(_lengths.size() + 1, 0);
    for (std::size_t i = 0; i < _lengths.size(); ++i) {
      _offsets[i + 1] = _offsets[i] + bins(i);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return _lengths.size(); }
  [[nodiscard]] std::uint64_t resolution() const noexcept { return _resolution; }
  [[nodiscard]] std::uint64_t length(std::size_t i) const { return _lengths.at(i); }
  [[nodiscard]] const std::vector<std::uint64_t> &lengths() const noexcept { return _lengths; }
  [[nodiscard]] const std::vector<std::string> &names() const noexcept { return _names; }
  [[nodiscard]] const std::string &name(std::size_t i) const { return _names.at(i); }

  [[nodiscard]] std::size_t bins(std::size_t i) const {
    return static_cast<std::size_t>((_lengths.at(i) + _resolution - 1) / _resolution);
  }
  [[nodiscard]] std::size_t offset(std::size_t i) const { return _offsets.at(i); }
  [[nodiscard]] std::size_t total_bins() const noexcept { return _offsets.empty() ? 0 : _offsets.back(); }

  [[nodiscard]] Genome with_resolution(std::uint64_t resolution) const {
    return Genome{_lengths, resolution, _names};
  }

  friend bool operator==(const Genome &a, const Genome &b) noexcept {
    return a._lengths == b._lengths && a._resolution == b._resolution;
  }

 private:
  std::vector<std::uint64_t> _lengths{};
  std::uint64_t _resolution{1};
  std::vector<std::string> _names{};
  std::vector<std::size_t> _offsets{};
};

// Dense genome-wide map; block (i, j) is the bins_i x bins_j sub-matrix.
struct ContactMap {
  Genome genome{};
  Matrix values{};

  ContactMap() = default;
  explicit ContactMap(Genome g) : genome(std::move(g)) {
    const auto n = static_cast<Eigen::Index>(genome.total_bins());
    values = Matrix::Zero(n, n);
  }
  ContactMap(Genome g, Matrix v) : genome(std::move(g)), values(std::move(v)) {
    const auto n = static_cast<Eigen::Index>(genome.total_bins());
    if (values.rows() != n || values.cols() != n) {
      throw std::invalid_argument("contact map is " + std::to_string(values.rows()) + "x" +
                                  std::to_string(values.cols()) + " but genome has " + std::to_string(n) +
                                  " bins");
    }
  }

  [[nodiscard]] auto block(std::size_t i, std::size_t j) {
    return values.block(static_cast<Eigen::Index>(genome.offset(i)), static_cast<Eigen::Index>(genome.offset(j)),
                        static_cast<Eigen::Index>(genome.bins(i)), static_cast<Eigen::Index>(genome.bins(j)));
  }
  [[nodiscard]] auto block(std::size_t i, std::size_t j) const {
    return values.block(static_cast<Eigen::Index>(genome.offset(i)), static_cast<Eigen::Index>(genome.offset(j)),
                        static_cast<Eigen::Index>(genome.bins(i)), static_cast<Eigen::Index>(genome.bins(j)));
  }
};

struct RowBlock {
  std::size_t source{};
  Matrix values{};
};

// The trans-blocks of one chromosome against all others; the target indexes rows.
struct TransRow {
  Genome genome{};
  std::size_t target{};
  std::vector<RowBlock> blocks{};

  [[nodiscard]] std::size_t rows() const { return blocks.empty() ? 0 : static_cast<std::size_t>(blocks.front().values.rows()); }
};

struct ParamVector {
  Genome genome{};
  std::vector<double> positions{};

  ParamVector() = default;
  ParamVector(Genome g, std::vector<double> p) : genome(std::move(g)), positions(std::move(p)) { validate(); }

  void validate() const {
    if (positions.size() != genome.size()) {
      throw std::invalid_argument("parameter vector has " + std::to_string(positions.size()) +
                                  " entries for a genome of " + std::to_string(genome.size()) + " chromosomes");
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto l = static_cast<double>(genome.length(i));
      if (!(positions[i] > 0.0 && positions[i] < l)) {
        throw std::out_of_range("position " + std::to_string(positions[i]) + " outside chromosome " +
                                std::to_string(i) + " (0, " + std::to_string(genome.length(i)) + ")");
      }
    }
  }
};

[[nodiscard]] inline TransRow extract_trans_row(const ContactMap &map, std::size_t i) {
  const auto &g = map.genome;
  if (i >= g.size()) {
    throw std::out_of_range("chromosome index " + std::to_string(i) + " out of range for " +
                            std::to_string(g.size()) + " chromosomes");
  }
  TransRow row{g, i, {}};
  row.blocks.reserve(g.size() - 1);
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (j == i) {
      continue;
    }
    // upper triangle is canonical
    if (j > i) {
      row.blocks.push_back({j, Matrix(map.block(i, j))});
    } else {
      row.blocks.push_back({j, Matrix(map.block(j, i).transpose())});
    }
  }
  return row;
}

// Writes the blocks of a row back into both triangles of the map.
inline void insert_trans_row(ContactMap &map, const TransRow &row) {
  for (const auto &b : row.blocks) {
    if (b.values.rows() != static_cast<Eigen::Index>(map.genome.bins(row.target)) ||
        b.values.cols() != static_cast<Eigen::Index>(map.genome.bins(b.source))) {
      throw std::invalid_argument("block shape does not match the genome");
    }
    map.block(row.target, b.source) = b.values;
    map.block(b.source, row.target) = b.values.transpose();
  }
}

// Selection sampling: k of n blocks uniformly without replacement, order kept.
[[nodiscard]] inline TransRow subsample_blocks(const TransRow &row, std::size_t k, std::uint64_t seed) {
  const auto n = row.blocks.size();
  if (k < 1 || k > n) {
    throw std::out_of_range("cannot sample " + std::to_string(k) + " of " + std::to_string(n) + " blocks");
  }
  TransRow out{row.genome, row.target, {}};
  out.blocks.reserve(k);
  Engine rng{seed};
  std::size_t needed = k;
  for (std::size_t idx = 0; idx < n && needed > 0; ++idx) {
    const auto remaining = n - idx;
    if (static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(remaining) - 1)) < needed) {
      out.blocks.push_back(row.blocks[idx]);
      --needed;
    }
  }
  return out;
}

}  // namespace bfkit
