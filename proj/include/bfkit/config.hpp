#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/model.hpp"
#include "bfkit/trainer.hpp"

namespace bfkit {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line{};
};

// key = value lines; '#' starts a comment; blank lines are skipped.
[[nodiscard]] inline std::vector<ConfigEntry> parse_key_values(const std::string &text, const std::string &what) {
  auto trim = [](const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  std::vector<ConfigEntry> out;
  std::istringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    if (trim(line).empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(what + " line " + std::to_string(lineno) + ": expected key = value");
    }
    out.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
  }
  return out;
}

namespace detail {

template <typename T>
[[nodiscard]] T parse_number(const ConfigEntry &e, const std::string &what) {
  std::istringstream ss(e.value);
  T v{};
  ss >> v;
  if (!ss || !ss.eof()) {
    throw std::invalid_argument(what + " line " + std::to_string(e.line) + ": bad value '" + e.value + "' for " +
                                e.key);
  }
  return v;
}

}  // namespace detail

[[nodiscard]] inline std::string to_text(const TrainConfig &c) {
  std::ostringstream ss;
  ss << std::setprecision(std::numeric_limits<double>::max_digits10);
  ss << "total_samples = " << c.total_samples << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "epochs = " << c.epochs << '\n'
     << "val_fraction = " << c.val_fraction << '\n'
     << "lr = " << c.lr << '\n'
     << "seed = " << c.seed << '\n'
     << "memory_budget = " << c.memory_budget << '\n'
     << "min_chroms = " << c.data.min_chroms << '\n'
     << "max_chroms = " << c.data.max_chroms << '\n'
     << "min_length = " << c.data.min_length << '\n'
     << "max_length = " << c.data.max_length << '\n'
     << "resolution = " << c.data.resolution << '\n'
     << "noise_level = " << c.data.noise_level << '\n'
     << "augment = " << (c.augment ? 1 : 0) << '\n'
     << c.model.to_text();
  return ss.str();
}

// Training keys plus every ModelConfig key; unknown keys are rejected.
[[nodiscard]] inline TrainConfig train_config_from_text(const std::string &text, TrainConfig cfg = {}) {
  const std::string what = "train config";
  std::string model_text = cfg.model.to_text();
  for (const auto &e : parse_key_values(text, what)) {
    using detail::parse_number;
    if (e.key == "total_samples") {
      cfg.total_samples = parse_number<std::size_t>(e, what);
    } else if (e.key == "batch_size") {
      cfg.batch_size = parse_number<std::size_t>(e, what);
    } else if (e.key == "epochs") {
      cfg.epochs = parse_number<std::size_t>(e, what);
    } else if (e.key == "val_fraction") {
      cfg.val_fraction = parse_number<double>(e, what);
    } else if (e.key == "lr") {
      cfg.lr = parse_number<double>(e, what);
    } else if (e.key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(e, what);
    } else if (e.key == "memory_budget") {
      cfg.memory_budget = parse_number<std::size_t>(e, what);
    } else if (e.key == "min_chroms") {
      cfg.data.min_chroms = parse_number<std::size_t>(e, what);
    } else if (e.key == "max_chroms") {
      cfg.data.max_chroms = parse_number<std::size_t>(e, what);
    } else if (e.key == "min_length") {
      cfg.data.min_length = parse_number<double>(e, what);
    } else if (e.key == "max_length") {
      cfg.data.max_length = parse_number<double>(e, what);
    } else if (e.key == "resolution") {
      cfg.data.resolution = parse_number<std::uint64_t>(e, what);
    } else if (e.key == "noise_level") {
      cfg.data.noise_level = parse_number<double>(e, what);
    } else if (e.key == "augment") {
      const auto v = parse_number<int>(e, what);
      if (v != 0 && v != 1) {
        throw std::invalid_argument(what + " line " + std::to_string(e.line) + ": augment must be 0 or 1");
      }
      cfg.augment = v == 1;
    } else if (e.key == "patch_size" || e.key == "embed_dim" || e.key == "depth" || e.key == "heads" ||
               e.key == "mlp_ratio" || e.key == "pos_encoding") {
      model_text += e.key + " = " + e.value + "\n";
    } else {
      throw std::invalid_argument(what + " line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    }
  }
  cfg.model = ModelConfig::from_text(model_text);
  cfg.data.validate();
  cfg.validate();
  return cfg;
}

[[nodiscard]] inline std::string read_text_file(const std::string &path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open " + path);
  }
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace bfkit
