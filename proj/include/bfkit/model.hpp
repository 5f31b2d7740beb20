#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/genome.hpp"
#include "bfkit/kernels.hpp"
#include "bfkit/normalize.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

enum class PosEncoding { pos3d_per_block, pos2d_per_block, pos2d, pos2d_pad, pos1d, none };

[[nodiscard]] inline std::string to_string(PosEncoding p) {
  switch (p) {
    case PosEncoding::pos3d_per_block:
      return "pos3d_per_block";
    case PosEncoding::pos2d_per_block:
      return "pos2d_per_block";
    case PosEncoding::pos2d:
      return "pos2d";
    case PosEncoding::pos2d_pad:
      return "pos2d_pad";
    case PosEncoding::pos1d:
      return "pos1d";
    case PosEncoding::none:
      return "none";
  }
  return "none";
}

[[nodiscard]] inline PosEncoding parse_pos_encoding(const std::string &s) {
  if (s == "pos3d_per_block" || s == "pos3d") {
    return PosEncoding::pos3d_per_block;
  }
  if (s == "pos2d_per_block") {
    return PosEncoding::pos2d_per_block;
  }
  if (s == "pos2d") {
    return PosEncoding::pos2d;
  }
  if (s == "pos2d_pad") {
    return PosEncoding::pos2d_pad;
  }
  if (s == "pos1d") {
    return PosEncoding::pos1d;
  }
  if (s == "none") {
    return PosEncoding::none;
  }
  throw std::invalid_argument("unknown positional encoding '" + s + "'");
}

[[nodiscard]] constexpr std::size_t coordinate_count(PosEncoding p) noexcept {
  switch (p) {
    case PosEncoding::pos3d_per_block:
      return 3;
    case PosEncoding::pos2d_per_block:
    case PosEncoding::pos2d:
    case PosEncoding::pos2d_pad:
      return 2;
    case PosEncoding::pos1d:
      return 1;
    case PosEncoding::none:
      return 0;
  }
  return 0;
}

struct ModelConfig {
  std::size_t patch_size{4};
  std::size_t embed_dim{24};
  std::size_t depth{4};
  std::size_t heads{4};
  std::size_t mlp_ratio{4};
  PosEncoding pos_encoding{PosEncoding::pos3d_per_block};

  void validate() const {
    if (patch_size == 0 || embed_dim == 0 || depth == 0 || heads == 0 || mlp_ratio == 0) {
      throw std::invalid_argument("model dimensions must be positive");
    }
    if (embed_dim % heads != 0) {
      throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                                  std::to_string(heads) + " heads");
    }
    const auto c = coordinate_count(pos_encoding);
    if (c > 0 && embed_dim % (2 * c) != 0) {
      throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                                  std::to_string(2 * c) + " as required by " + to_string(pos_encoding));
    }
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream ss;
    ss << "patch_size = " << patch_size << '\n'
       << "embed_dim = " << embed_dim << '\n'
       << "depth = " << depth << '\n'
       << "heads = " << heads << '\n'
       << "mlp_ratio = " << mlp_ratio << '\n'
       << "pos_encoding = " << to_string(pos_encoding) << '\n';
    return ss.str();
  }

  // key = value lines; '#' starts a comment; unknown keys are rejected.
  [[nodiscard]] static ModelConfig from_text(const std::string &text) {
    ModelConfig cfg{};
    std::istringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) {
        line.erase(hash);
      }
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) {
        continue;
      }
      if (eq == std::string::npos) {
        throw std::invalid_argument("model config line " + std::to_string(lineno) + ": expected key = value");
      }
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      auto as_size = [&]() {
        std::size_t pos = 0;
        const auto v = std::stoull(value, &pos);
        if (pos != value.size()) {
          throw std::invalid_argument("model config line " + std::to_string(lineno) + ": bad integer '" + value +
                                      "'");
        }
        return static_cast<std::size_t>(v);
      };
      if (key == "patch_size") {
        cfg.patch_size = as_size();
      } else if (key == "embed_dim") {
        cfg.embed_dim = as_size();
      } else if (key == "depth") {
        cfg.depth = as_size();
      } else if (key == "heads") {
        cfg.heads = as_size();
      } else if (key == "mlp_ratio") {
        cfg.mlp_ratio = as_size();
      } else if (key == "pos_encoding") {
        cfg.pos_encoding = parse_pos_encoding(value);
      } else {
        throw std::invalid_argument("model config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    }
    cfg.validate();
    return cfg;
  }

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

struct PatchPosition {
  std::int64_t block{};       // index of the block within the row
  std::int64_t row{};         // patch row inside the block
  std::int64_t col{};         // patch column inside the block
  std::int64_t global_col{};  // patch column across the concatenated row
  std::int64_t flat{};        // scan index
};

struct Patches {
  Matrix values{};  // N x P^2, each patch flattened row-major
  std::vector<PatchPosition> positions{};
  std::vector<bool> pad_mask{};  // true when the patch holds only padding
  [[nodiscard]] std::size_t count() const noexcept { return positions.size(); }
};

namespace detail {

inline void append_patches(const Matrix &m, Eigen::Index valid_rows, Eigen::Index valid_cols, std::int64_t block,
                           std::int64_t col_offset, Eigen::Index p, std::vector<Eigen::VectorXd> &rows,
                           Patches &out) {
  const auto pr = m.rows() / p;
  const auto pc = m.cols() / p;
  for (Eigen::Index a = 0; a < pr; ++a) {
    for (Eigen::Index b = 0; b < pc; ++b) {
      Eigen::VectorXd v(p * p);
      for (Eigen::Index x = 0; x < p; ++x) {
        for (Eigen::Index y = 0; y < p; ++y) {
          v(x * p + y) = m(a * p + x, b * p + y);
        }
      }
      rows.push_back(std::move(v));
      const auto flat = static_cast<std::int64_t>(out.positions.size());
      out.positions.push_back({block, a, b, col_offset + b, flat});
      out.pad_mask.push_back(a * p >= valid_rows || b * p >= valid_cols);
    }
  }
}

}  // namespace detail

// Block-major, then row-major within each block. Each block is zero-padded
// on its own, except for pos2d_pad which pads the concatenated row once.
[[nodiscard]] inline Patches patchify(const TransRow &row, std::size_t patch,
                                      PosEncoding scheme = PosEncoding::pos3d_per_block) {
  if (row.blocks.empty()) {
    throw std::invalid_argument("cannot patchify a row without blocks");
  }
  if (patch == 0) {
    throw std::invalid_argument("patch size must be positive");
  }
  const auto p = static_cast<Eigen::Index>(patch);
  Patches out{};
  std::vector<Eigen::VectorXd> rows;
  if (scheme == PosEncoding::pos2d_pad) {
    const auto h = row.blocks.front().values.rows();
    Eigen::Index w = 0;
    for (const auto &b : row.blocks) {
      if (b.values.rows() != h) {
        throw std::invalid_argument("blocks of a row must share their row count");
      }
      w += b.values.cols();
    }
    Matrix cat = Matrix::Zero((h + p - 1) / p * p, (w + p - 1) / p * p);
    Eigen::Index c0 = 0;
    for (const auto &b : row.blocks) {
      cat.block(0, c0, h, b.values.cols()) = b.values;
      c0 += b.values.cols();
    }
    detail::append_patches(cat, h, w, 0, 0, p, rows, out);
  } else {
    std::int64_t col_offset = 0;
    for (std::size_t bi = 0; bi < row.blocks.size(); ++bi) {
      const auto &b = row.blocks[bi].values;
      Matrix m = Matrix::Zero((b.rows() + p - 1) / p * p, (b.cols() + p - 1) / p * p);
      m.topLeftCorner(b.rows(), b.cols()) = b;
      detail::append_patches(m, b.rows(), b.cols(), static_cast<std::int64_t>(bi), col_offset, p, rows, out);
      col_offset += m.cols() / p;
    }
  }
  out.values.resize(static_cast<Eigen::Index>(rows.size()), p * p);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    out.values.row(static_cast<Eigen::Index>(n)) = rows[n].transpose();
  }
  return out;
}

// Fixed sine-cosine encoding, each coordinate gets D / ncoords dims:
// PE[2m] = sin(c / 10000^(2m/d)), PE[2m+1] = cos(c / 10000^(2m/d)).
[[nodiscard]] inline Matrix encode_positions(const std::vector<PatchPosition> &positions, std::size_t dim,
                                             PosEncoding scheme) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  Matrix pe = Matrix::Zero(n, static_cast<Eigen::Index>(dim));
  const auto ncoords = coordinate_count(scheme);
  if (ncoords == 0) {
    return pe;
  }
  if (dim % (2 * ncoords) != 0) {
    throw std::invalid_argument("dimension " + std::to_string(dim) + " is not divisible by " +
                                std::to_string(2 * ncoords) + " for " + to_string(scheme));
  }
  const auto seg = dim / ncoords;
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto &q = positions[static_cast<std::size_t>(t)];
    std::array<double, 3> c{};
    switch (scheme) {
      case PosEncoding::pos3d_per_block:
        c = {static_cast<double>(q.block), static_cast<double>(q.row), static_cast<double>(q.col)};
        break;
      case PosEncoding::pos2d_per_block:
        c = {static_cast<double>(q.row), static_cast<double>(q.col), 0.0};
        break;
      case PosEncoding::pos2d:
      case PosEncoding::pos2d_pad:
        c = {static_cast<double>(q.row), static_cast<double>(q.global_col), 0.0};
        break;
      case PosEncoding::pos1d:
        c = {static_cast<double>(q.flat), 0.0, 0.0};
        break;
      case PosEncoding::none:
        break;
    }
    for (std::size_t k = 0; k < ncoords; ++k) {
      for (std::size_t m = 0; m < seg / 2; ++m) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(m) / static_cast<double>(seg));
        const auto col = static_cast<Eigen::Index>(k * seg + 2 * m);
        pe(t, col) = std::sin(c[k] * freq);
        pe(t, col + 1) = std::cos(c[k] * freq);
      }
    }
  }
  return pe;
}

template <typename T>
struct LayerWeights {
  Mat<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T>
struct Weights {
  Mat<T> patch_w, patch_b, cls;
  std::vector<LayerWeights<T>> layers;
  Mat<T> norm_g, norm_b, head_w, head_b;

  [[nodiscard]] static Weights zeros(const ModelConfig &cfg) {
    const auto d = static_cast<Eigen::Index>(cfg.embed_dim);
    const auto h = static_cast<Eigen::Index>(cfg.embed_dim * cfg.mlp_ratio);
    const auto pp = static_cast<Eigen::Index>(cfg.patch_size * cfg.patch_size);
    Weights w{};
    w.patch_w = Mat<T>::Zero(pp, d);
    w.patch_b = Mat<T>::Zero(1, d);
    w.cls = Mat<T>::Zero(1, d);
    w.layers.resize(cfg.depth);
    for (auto &l : w.layers) {
      l.ln1_g = l.ln1_b = l.ln2_g = l.ln2_b = Mat<T>::Zero(1, d);
      l.wq = l.wk = l.wv = l.wo = Mat<T>::Zero(d, d);
      l.bq = l.bk = l.bv = l.bo = Mat<T>::Zero(1, d);
      l.fc1_w = Mat<T>::Zero(d, h);
      l.fc1_b = Mat<T>::Zero(1, h);
      l.fc2_w = Mat<T>::Zero(h, d);
      l.fc2_b = Mat<T>::Zero(1, d);
    }
    w.norm_g = w.norm_b = Mat<T>::Zero(1, d);
    w.head_w = Mat<T>::Zero(d, 1);
    w.head_b = Mat<T>::Zero(1, 1);
    return w;
  }

  // Fixed order shared by the optimizer, checkpoints and gradient checks.
  [[nodiscard]] std::vector<Mat<T> *> tensors() {
    std::vector<Mat<T> *> t{&patch_w, &patch_b, &cls};
    for (auto &l : layers) {
      for (auto *m : {&l.ln1_g, &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln2_g,
                      &l.ln2_b, &l.fc1_w, &l.fc1_b, &l.fc2_w, &l.fc2_b}) {
        t.push_back(m);
      }
    }
    for (auto *m : {&norm_g, &norm_b, &head_w, &head_b}) {
      t.push_back(m);
    }
    return t;
  }

  [[nodiscard]] std::vector<const Mat<T> *> tensors() const {
    auto t = const_cast<Weights *>(this)->tensors();
    return {t.begin(), t.end()};
  }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> n{"patch.weight", "patch.bias", "cls_token"};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = "blocks." + std::to_string(i) + ".";
      for (const auto *s : {"ln1.weight", "ln1.bias", "attn.q.weight", "attn.q.bias", "attn.k.weight", "attn.k.bias",
                            "attn.v.weight", "attn.v.bias", "attn.out.weight", "attn.out.bias", "ln2.weight",
                            "ln2.bias", "mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) {
        n.push_back(p + s);
      }
    }
    for (const auto *s : {"norm.weight", "norm.bias", "head.weight", "head.bias"}) {
      n.emplace_back(s);
    }
    return n;
  }

  void set_zero() {
    for (auto *m : tensors()) {
      m->setZero();
    }
  }
};

// Input of one forward pass: M rows sharing one block structure.
template <typename T>
struct ModelInput {
  Mat<T> patches{};  // (M * N) x P^2
  Mat<T> pos{};      // N x D
  Eigen::Index samples{};
  Eigen::Index tokens{};  // N, patches per sample
};

template <typename T>
struct LayerCache {
  LayerNormCache<T> ln1{};
  MhaCache<T> mha{};
  LayerNormCache<T> ln2{};
  Mat<T> h2{}, f1{}, g{};
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers{};
  LayerNormCache<T> norm{};
  Mat<T> cls_out{};  // M x D after the final norm
  std::vector<T> u{};
};

template <typename T>
class BlockFormer {
 public:
  BlockFormer() : BlockFormer(ModelConfig{}, 0) {}

  explicit BlockFormer(ModelConfig cfg, std::uint64_t seed = 0) : _cfg(cfg) {
    _cfg.validate();
    _w = Weights<T>::zeros(_cfg);
    init(seed);
  }

  BlockFormer(ModelConfig cfg, Weights<T> w) : _cfg(cfg), _w(std::move(w)) {
    _cfg.validate();
    const auto ref = Weights<T>::zeros(_cfg);
    const auto a = _w.tensors();
    const auto b = ref.tensors();
    const auto names = ref.names();
    if (a.size() != b.size()) {
      throw std::invalid_argument("weight set does not match the model configuration");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) {
        throw ShapeError(names[i] + ": expected " + std::to_string(b[i]->rows()) + "x" +
                         std::to_string(b[i]->cols()) + ", got " + std::to_string(a[i]->rows()) + "x" +
                         std::to_string(a[i]->cols()));
      }
    }
  }

  [[nodiscard]] const ModelConfig &config() const noexcept { return _cfg; }
  [[nodiscard]] Weights<T> &weights() noexcept { return _w; }
  [[nodiscard]] const Weights<T> &weights() const noexcept { return _w; }

  // Linear maps get U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the class token a
  // truncated normal (std 0.02, cut at 2 std); biases zero, layer-norm gains
  // one. With 0.02 everywhere the attention starts uniform, patch content is
  // swamped by the position vectors and training sits on the mean predictor.
  void init(std::uint64_t seed) {
    Engine rng{derive_seed(seed, {0x1417})};
    std::normal_distribution<double> nd(0.0, 1.0);
    auto tn = [&](Mat<T> &m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        double z = nd(rng);
        while (std::abs(z) > 2.0) {
          z = nd(rng);
        }
        m.data()[i] = static_cast<T>(0.02 * z);
      }
    };
    auto fan_in = [&](Mat<T> &m) {
      const double b = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      std::uniform_real_distribution<double> ud(-b, b);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<T>(ud(rng));
      }
    };
    _w.set_zero();
    fan_in(_w.patch_w);
    tn(_w.cls);
    for (auto &l : _w.layers) {
      l.ln1_g.setOnes();
      l.ln2_g.setOnes();
      fan_in(l.wq);
      fan_in(l.wk);
      fan_in(l.wv);
      fan_in(l.wo);
      fan_in(l.fc1_w);
      fan_in(l.fc2_w);
    }
    _w.norm_g.setOnes();
    fan_in(_w.head_w);
  }

  [[nodiscard]] ModelInput<T> make_input(const std::vector<const TransRow *> &rows) const {
    if (rows.empty()) {
      throw std::invalid_argument("empty batch");
    }
    ModelInput<T> in{};
    std::vector<Patches> ps;
    ps.reserve(rows.size());
    for (const auto *r : rows) {
      ps.push_back(patchify(*r, _cfg.patch_size, _cfg.pos_encoding));
    }
    const auto n = static_cast<Eigen::Index>(ps.front().count());
    const auto pp = ps.front().values.cols();
    in.samples = static_cast<Eigen::Index>(rows.size());
    in.tokens = n;
    in.patches.resize(in.samples * n, pp);
    for (std::size_t m = 0; m < ps.size(); ++m) {
      if (static_cast<Eigen::Index>(ps[m].count()) != n) {
        throw std::invalid_argument("rows of one batch must share their block structure");
      }
      in.patches.middleRows(static_cast<Eigen::Index>(m) * n, n) = ps[m].values.cast<T>();
    }
    in.pos = encode_positions(ps.front().positions, _cfg.embed_dim, _cfg.pos_encoding).cast<T>();
    return in;
  }

  // Returns u in (0, 1) per sample; the cache keeps what backward needs.
  [[nodiscard]] std::vector<T> forward(const ModelInput<T> &in, ForwardCache<T> *cache = nullptr) const {
    const auto d = static_cast<Eigen::Index>(_cfg.embed_dim);
    const auto heads = static_cast<Eigen::Index>(_cfg.heads);
    const auto mcount = in.samples;
    const auto n = in.tokens;
    const auto s = n + 1;
    if (in.patches.cols() != _w.patch_w.rows()) {
      detail::shape_mismatch("patch embedding", in.patches, _w.patch_w);
    }
    const Mat<T> e = linear(in.patches, _w.patch_w, _w.patch_b);
    Mat<T> x(mcount * s, d);
    for (Eigen::Index m = 0; m < mcount; ++m) {
      x.row(m * s) = _w.cls.row(0);
      x.middleRows(m * s + 1, n) = e.middleRows(m * n, n) + in.pos;
    }
    if (cache != nullptr) {
      cache->layers.resize(_w.layers.size());
    }
    const T eps = static_cast<T>(1e-5);
    for (std::size_t li = 0; li < _w.layers.size(); ++li) {
      const auto &l = _w.layers[li];
      LayerCache<T> *lc = cache != nullptr ? &cache->layers[li] : nullptr;
      const AttentionWeights<T> aw{l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo};
      {
        const Mat<T> h1 = layer_norm(x, l.ln1_g, l.ln1_b, eps, lc != nullptr ? &lc->ln1 : nullptr);
        x += multi_head_attention(h1, aw, mcount, s, heads, lc != nullptr ? &lc->mha : nullptr);
      }
      Mat<T> h2 = layer_norm(x, l.ln2_g, l.ln2_b, eps, lc != nullptr ? &lc->ln2 : nullptr);
      Mat<T> f1 = linear(h2, l.fc1_w, l.fc1_b);
      Mat<T> g = gelu(f1);
      x += linear(g, l.fc2_w, l.fc2_b);
      if (lc != nullptr) {
        lc->h2 = std::move(h2);
        lc->f1 = std::move(f1);
        lc->g = std::move(g);
      }
    }
    Mat<T> c(mcount, d);
    for (Eigen::Index m = 0; m < mcount; ++m) {
      c.row(m) = x.row(m * s);
    }
    Mat<T> cn = layer_norm(c, _w.norm_g, _w.norm_b, eps, cache != nullptr ? &cache->norm : nullptr);
    const Mat<T> z = linear(cn, _w.head_w, _w.head_b);
    std::vector<T> u(static_cast<std::size_t>(mcount));
    for (Eigen::Index m = 0; m < mcount; ++m) {
      u[static_cast<std::size_t>(m)] = sigmoid(z(m, 0));
    }
    if (cache != nullptr) {
      cache->cls_out = std::move(cn);
      cache->u = u;
    }
    return u;
  }

  // Accumulates parameter gradients of sum_m du[m] * u[m] into grads.
  void backward(const ModelInput<T> &in, const ForwardCache<T> &cache, const std::vector<T> &du,
                Weights<T> &grads) const {
    const auto d = static_cast<Eigen::Index>(_cfg.embed_dim);
    const auto heads = static_cast<Eigen::Index>(_cfg.heads);
    const auto mcount = in.samples;
    const auto n = in.tokens;
    const auto s = n + 1;
    if (static_cast<Eigen::Index>(du.size()) != mcount) {
      throw ShapeError("backward: " + std::to_string(du.size()) + " output gradients for " +
                       std::to_string(mcount) + " samples");
    }
    Mat<T> dz(mcount, 1);
    for (Eigen::Index m = 0; m < mcount; ++m) {
      const T u = cache.u[static_cast<std::size_t>(m)];
      dz(m, 0) = du[static_cast<std::size_t>(m)] * u * (T{1} - u);
    }
    Mat<T> dcn;
    linear_backward(dz, cache.cls_out, _w.head_w, &dcn, grads.head_w, grads.head_b);
    const Mat<T> dc = layer_norm_backward(dcn, cache.norm, _w.norm_g, grads.norm_g, grads.norm_b);
    Mat<T> dx = Mat<T>::Zero(mcount * s, d);
    for (Eigen::Index m = 0; m < mcount; ++m) {
      dx.row(m * s) = dc.row(m);
    }
    for (std::size_t li = _w.layers.size(); li-- > 0;) {
      const auto &l = _w.layers[li];
      auto &gl = grads.layers[li];
      const auto &lc = cache.layers[li];
      {
        Mat<T> dg;
        linear_backward(dx, lc.g, l.fc2_w, &dg, gl.fc2_w, gl.fc2_b);
        const Mat<T> df1 = gelu_backward(dg, lc.f1);
        Mat<T> dh2;
        linear_backward(df1, lc.h2, l.fc1_w, &dh2, gl.fc1_w, gl.fc1_b);
        dx += layer_norm_backward(dh2, lc.ln2, l.ln2_g, gl.ln2_g, gl.ln2_b);
      }
      {
        const AttentionWeights<T> aw{l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo};
        const AttentionGrads<T> ag{gl.wq, gl.bq, gl.wk, gl.bk, gl.wv, gl.bv, gl.wo, gl.bo};
        const Mat<T> dh1 = multi_head_attention_backward(dx, aw, ag, mcount, s, heads, lc.mha);
        dx += layer_norm_backward(dh1, lc.ln1, l.ln1_g, gl.ln1_g, gl.ln1_b);
      }
    }
    Mat<T> de(mcount * n, d);
    for (Eigen::Index m = 0; m < mcount; ++m) {
      grads.cls.row(0) += dx.row(m * s);
      de.middleRows(m * n, n) = dx.middleRows(m * s + 1, n);
    }
    linear_backward<T>(de, in.patches, _w.patch_w, nullptr, grads.patch_w, grads.patch_b);
  }

  // Normalized estimate u for one preprocessed row (normalized to [0, 1]).
  [[nodiscard]] T predict_normalized(const TransRow &row) const {
    return forward(make_input({&row})).front();
  }

  // theta_hat = u * l_target in bp.
  [[nodiscard]] double predict(const TransRow &row) const {
    return static_cast<double>(predict_normalized(row)) * static_cast<double>(row.genome.length(row.target));
  }

  // Bytes of activations cached per sample during training.
  [[nodiscard]] std::size_t cache_bytes_per_sample(Eigen::Index tokens) const {
    const auto s = static_cast<std::size_t>(tokens + 1);
    return s * _cfg.embed_dim * _cfg.depth * (8 + 2 * _cfg.mlp_ratio) * sizeof(T);
  }

 private:
  ModelConfig _cfg{};
  Weights<T> _w{};
};

// Normalizes to [0, 1] and pads each block to the patch size; pos2d_pad
// rows stay unpadded since patchify pads the concatenated row.
[[nodiscard]] inline TransRow prepare_row(const TransRow &row, const ModelConfig &cfg) {
  if (cfg.pos_encoding == PosEncoding::pos2d_pad) {
    return normalize_01(row);
  }
  return pad_blocks(normalize_01(row), cfg.patch_size);
}

}  // namespace bfkit
