#pragma once

// BFWT1 layout: magic, u32 config length, config text, u32 tensor count,
// per tensor (u32 name length, name, u8 dtype, u32 ndim, u64 dims, u64 byte
// offset into the payload), then the raw little-endian payload.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "bfkit/io.hpp"
#include "bfkit/model.hpp"

namespace bfkit {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct RawTensor {
  std::string name{};
  DType dtype{DType::f64};
  std::vector<std::uint64_t> dims{};
  std::vector<double> data{};  // widened copy; f32 values convert exactly
};

struct Checkpoint {
  std::string config{};
  std::vector<RawTensor> tensors{};
};

namespace detail {

inline constexpr std::string_view weights_magic = "BFWT1";

[[nodiscard]] inline std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

}  // namespace detail

template <typename T>
void save_checkpoint(std::ostream &os, const BlockFormer<T> &model) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  constexpr DType dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  const auto config = model.config().to_text();
  const auto tensors = model.weights().tensors();
  const auto names = model.weights().names();
  os.write(detail::weights_magic.data(), static_cast<std::streamsize>(detail::weights_magic.size()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(names[i].size()));
    os.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    detail::write_le<std::uint32_t>(os, 2);
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(tensors[i]->rows()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(tensors[i]->cols()));
    detail::write_le<std::uint64_t>(os, offset);
    offset += static_cast<std::uint64_t>(tensors[i]->size()) * sizeof(T);
  }
  for (const auto *t : tensors) {
    for (Eigen::Index k = 0; k < t->size(); ++k) {
      detail::write_le<T>(os, t->data()[k]);
    }
  }
}

[[nodiscard]] inline Checkpoint read_checkpoint(std::istream &is) {
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) ||
      std::string_view(magic.data(), magic.size()) != detail::weights_magic) {
    throw FormatError("not a BFWT1 checkpoint (bad magic)");
  }
  Checkpoint ck{};
  const auto clen = detail::read_le<std::uint32_t>(is, "config length");
  ck.config.resize(clen);
  if (!is.read(ck.config.data(), clen)) {
    throw FormatError("unexpected end of file while reading config");
  }
  const auto count = detail::read_le<std::uint32_t>(is, "tensor count");
  std::vector<std::uint64_t> offsets;
  std::uint64_t expected = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t{};
    const auto nlen = detail::read_le<std::uint32_t>(is, "tensor name length");
    t.name.resize(nlen);
    if (!is.read(t.name.data(), nlen)) {
      throw FormatError("unexpected end of file while reading tensor name");
    }
    const auto dt = detail::read_le<std::uint8_t>(is, "dtype");
    if (dt > 1) {
      throw FormatError("tensor " + t.name + ": unknown dtype " + std::to_string(dt));
    }
    t.dtype = static_cast<DType>(dt);
    const auto ndim = detail::read_le<std::uint32_t>(is, "ndim");
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      t.dims.push_back(detail::read_le<std::uint64_t>(is, "dims"));
      numel *= t.dims.back();
    }
    const auto off = detail::read_le<std::uint64_t>(is, "offset");
    if (off != expected) {
      throw FormatError("tensor " + t.name + ": payload offset " + std::to_string(off) + ", expected " +
                        std::to_string(expected));
    }
    expected += numel * detail::dtype_size(t.dtype);
    t.data.resize(numel);
    ck.tensors.push_back(std::move(t));
  }
  for (auto &t : ck.tensors) {
    for (auto &v : t.data) {
      v = t.dtype == DType::f32 ? static_cast<double>(detail::read_le<float>(is, "payload"))
                                : detail::read_le<double>(is, "payload");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint payload");
  }
  return ck;
}

template <typename T>
[[nodiscard]] BlockFormer<T> model_from_checkpoint(const Checkpoint &ck) {
  const auto cfg = ModelConfig::from_text(ck.config);
  auto w = Weights<T>::zeros(cfg);
  auto tensors = w.tensors();
  const auto names = w.names();
  if (ck.tensors.size() != tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                      std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto &t = ck.tensors[i];
    if (t.name != names[i]) {
      throw FormatError("tensor " + std::to_string(i) + " is '" + t.name + "', expected '" + names[i] + "'");
    }
    if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(tensors[i]->rows()) ||
        t.dims[1] != static_cast<std::uint64_t>(tensors[i]->cols())) {
      throw FormatError("tensor " + t.name + " has the wrong shape");
    }
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      tensors[i]->data()[k] = static_cast<T>(t.data[k]);
    }
  }
  return BlockFormer<T>{cfg, std::move(w)};
}

template <typename T>
void save_model(const BlockFormer<T> &model, const std::filesystem::path &path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  save_checkpoint(os, model);
}

template <typename T>
[[nodiscard]] BlockFormer<T> load_model(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  try {
    return model_from_checkpoint<T>(read_checkpoint(is));
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace bfkit
