#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "bfkit/genome.hpp"

namespace bfkit {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void write_le(std::ostream &os, T value) {
  std::array<char, sizeof(T)> buf{};
  std::memcpy(buf.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf.begin(), buf.end());
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
[[nodiscard]] T read_le(std::istream &is, std::string_view what) {
  std::array<char, sizeof(T)> buf{};
  if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw FormatError("unexpected end of file while reading " + std::string(what));
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf.begin(), buf.end());
  }
  T value{};
  std::memcpy(&value, buf.data(), sizeof(T));
  return value;
}

inline constexpr std::string_view map_magic = "BFMAP1";

}  // namespace detail

// BFMAP1: magic, resolution u64, L u32, lengths u64 x L, row-major f64 values.
inline void save_map_binary(const ContactMap &map, std::ostream &os) {
  os.write(detail::map_magic.data(), static_cast<std::streamsize>(detail::map_magic.size()));
  detail::write_le<std::uint64_t>(os, map.genome.resolution());
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(map.genome.size()));
  for (const auto l : map.genome.lengths()) {
    detail::write_le<std::uint64_t>(os, l);
  }
  for (Eigen::Index i = 0; i < map.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.values.cols(); ++j) {
      detail::write_le<double>(os, map.values(i, j));
    }
  }
}

[[nodiscard]] inline ContactMap load_map_binary(std::istream &is) {
  std::array<char, 6> magic{};
  if (!is.read(magic.data(), magic.size()) ||
      std::string_view(magic.data(), magic.size()) != detail::map_magic) {
    throw FormatError("not a BFMAP1 file (bad magic)");
  }
  const auto resolution = detail::read_le<std::uint64_t>(is, "resolution");
  const auto count = detail::read_le<std::uint32_t>(is, "chromosome count");
  if (count == 0) {
    throw FormatError("malformed header: zero chromosomes");
  }
  std::vector<std::uint64_t> lengths(count);
  for (auto &l : lengths) {
    l = detail::read_le<std::uint64_t>(is, "chromosome length");
  }
  Genome g;
  try {
    g = Genome{std::move(lengths), resolution};
  } catch (const std::invalid_argument &e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  const auto n = static_cast<Eigen::Index>(g.total_bins());
  Matrix values(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto v = detail::read_le<double>(is, "matrix body (dimension mismatch)");
      if (v < 0.0) {
        throw FormatError("negative count at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      values(i, j) = v;
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("dimension mismatch: trailing bytes after matrix body");
  }
  return ContactMap{std::move(g), std::move(values)};
}

// COO text: '#resolution r', '#chrom name length' (ordered), '#symmetric 0|1',
// then 'bin_i<TAB>bin_j<TAB>count' with global bin indices.
inline void save_map_coo(const ContactMap &map, std::ostream &os, bool symmetric = true) {
  os << "#resolution " << map.genome.resolution() << '\n';
  for (std::size_t i = 0; i < map.genome.size(); ++i) {
    os << "#chrom " << map.genome.name(i) << ' ' << map.genome.length(i) << '\n';
  }
  os << "#symmetric " << (symmetric ? 1 : 0) << '\n';
  os.precision(17);
  for (Eigen::Index i = 0; i < map.values.rows(); ++i) {
    for (Eigen::Index j = symmetric ? i : 0; j < map.values.cols(); ++j) {
      if (map.values(i, j) != 0.0) {
        os << i << '\t' << j << '\t' << map.values(i, j) << '\n';
      }
    }
  }
}

[[nodiscard]] inline ContactMap load_map_coo(std::istream &is) {
  std::uint64_t resolution = 0;
  std::vector<std::uint64_t> lengths;
  std::vector<std::string> names;
  bool symmetric = false;
  std::vector<std::tuple<std::uint64_t, std::uint64_t, double, std::size_t>> entries;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::istringstream ss(line);
    if (line.front() == '#') {
      std::string key;
      ss >> key;
      if (key == "#resolution") {
        if (!(ss >> resolution) || resolution == 0) {
          throw FormatError("line " + std::to_string(lineno) + ": malformed #resolution header");
        }
      } else if (key == "#chrom") {
        std::string name;
        std::uint64_t len = 0;
        if (!(ss >> name >> len)) {
          throw FormatError("line " + std::to_string(lineno) + ": malformed #chrom header");
        }
        names.push_back(name);
        lengths.push_back(len);
      } else if (key == "#symmetric") {
        int flag = -1;
        if (!(ss >> flag) || (flag != 0 && flag != 1)) {
          throw FormatError("line " + std::to_string(lineno) + ": #symmetric must be 0 or 1");
        }
        symmetric = flag == 1;
      }
      continue;
    }
    std::int64_t a = 0;
    std::int64_t b = 0;
    double c = 0.0;
    if (!(ss >> a >> b >> c)) {
      throw FormatError("line " + std::to_string(lineno) + ": expected 'bin_i<TAB>bin_j<TAB>count'");
    }
    if (a < 0 || b < 0) {
      throw FormatError("line " + std::to_string(lineno) + ": negative bin index");
    }
    if (c < 0.0 || !std::isfinite(c)) {
      throw FormatError("line " + std::to_string(lineno) + ": negative or non-finite count");
    }
    entries.emplace_back(static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b), c, lineno);
  }
  if (resolution == 0 || lengths.empty()) {
    throw FormatError("malformed header: #resolution and at least one #chrom are required");
  }
  Genome g;
  try {
    g = Genome{std::move(lengths), resolution, std::move(names)};
  } catch (const std::invalid_argument &e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  ContactMap map{g};
  const auto n = g.total_bins();
  for (const auto &[a, b, c, ln] : entries) {
    if (a >= n || b >= n) {
      throw FormatError("line " + std::to_string(ln) + ": bin index out of range (genome has " +
                        std::to_string(n) + " bins)");
    }
    map.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = c;
    if (symmetric) {
      map.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = c;
    }
  }
  return map;
}

enum class MapFormat { binary, coo };

[[nodiscard]] inline MapFormat format_for(const std::filesystem::path &path) {
  const auto ext = path.extension().string();
  if (ext == ".coo" || ext == ".tsv" || ext == ".txt") {
    return MapFormat::coo;
  }
  return MapFormat::binary;
}

inline void save_map(const ContactMap &map, const std::filesystem::path &path) {
  const auto fmt = format_for(path);
  std::ofstream os(path, fmt == MapFormat::binary ? std::ios::binary : std::ios::out);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  if (fmt == MapFormat::binary) {
    save_map_binary(map, os);
  } else {
    save_map_coo(map, os);
  }
}

[[nodiscard]] inline ContactMap load_map(const std::filesystem::path &path) {
  const auto fmt = format_for(path);
  std::ifstream is(path, fmt == MapFormat::binary ? std::ios::binary : std::ios::in);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  try {
    return fmt == MapFormat::binary ? load_map_binary(is) : load_map_coo(is);
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Positions as text: one "name<TAB>position_bp" line per chromosome, in genome order.
inline void save_positions(const ParamVector &p, std::ostream &os) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "# name\tposition_bp\n";
  for (std::size_t i = 0; i < p.positions.size(); ++i) {
    ss << p.genome.name(i) << '\t' << p.positions[i] << '\n';
  }
  os << ss.str();
}

[[nodiscard]] inline ParamVector load_positions(std::istream &is, const Genome &genome) {
  std::vector<double> pos;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') {
      continue;
    }
    std::istringstream ls(line);
    std::string name;
    double v = 0.0;
    if (!(ls >> name >> v)) {
      throw FormatError("positions line " + std::to_string(lineno) + ": expected name and position");
    }
    const auto i = pos.size();
    if (i >= genome.size()) {
      throw FormatError("positions file lists more than the genome's " + std::to_string(genome.size()) +
                        " chromosomes");
    }
    if (name != genome.name(i)) {
      throw FormatError("positions line " + std::to_string(lineno) + ": expected chromosome " + genome.name(i) +
                        ", got " + name);
    }
    pos.push_back(v);
  }
  if (pos.size() != genome.size()) {
    throw FormatError("positions file lists " + std::to_string(pos.size()) + " of " +
                      std::to_string(genome.size()) + " chromosomes");
  }
  return ParamVector{genome, std::move(pos)};
}

inline void save_positions(const ParamVector &p, const std::filesystem::path &path) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  save_positions(p, os);
}

[[nodiscard]] inline ParamVector load_positions(const std::filesystem::path &path, const Genome &genome) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  try {
    return load_positions(is, genome);
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace bfkit
