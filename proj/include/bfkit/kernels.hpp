#pragma once

// Differentiable kernels used by the model. Every forward has a matching
// *_backward that maps the output gradient to input gradients; parameter
// gradients are accumulated (+=) so micro-batches can share one buffer.

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfkit {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename A, typename B>
[[noreturn]] void shape_mismatch(const char *op, const A &a, const B &b) {
  std::ostringstream ss;
  ss << op << ": shape mismatch (" << a.rows() << "x" << a.cols() << ") vs (" << b.rows() << "x" << b.cols() << ")";
  throw ShapeError(ss.str());
}

}  // namespace detail

template <typename T>
[[nodiscard]] Mat<T> matmul(const Mat<T> &a, const Mat<T> &b) {
  if (a.cols() != b.rows()) {
    detail::shape_mismatch("matmul", a, b);
  }
  return a * b;
}

template <typename T>
void matmul_backward(const Mat<T> &dc, const Mat<T> &a, const Mat<T> &b, Mat<T> *da, Mat<T> *db) {
  if (da != nullptr) {
    da->noalias() = dc * b.transpose();
  }
  if (db != nullptr) {
    db->noalias() = a.transpose() * dc;
  }
}

template <typename T>
[[nodiscard]] Mat<T> add(const Mat<T> &a, const Mat<T> &b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    detail::shape_mismatch("add", a, b);
  }
  return a + b;
}

template <typename T>
[[nodiscard]] Mat<T> scale(const Mat<T> &a, T s) {
  return a * s;
}

template <typename T>
[[nodiscard]] Mat<T> concat_rows(const Mat<T> &a, const Mat<T> &b) {
  if (a.cols() != b.cols()) {
    detail::shape_mismatch("concat", a, b);
  }
  Mat<T> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

template <typename T>
void concat_rows_backward(const Mat<T> &dout, Eigen::Index rows_a, Mat<T> &da, Mat<T> &db) {
  da = dout.topRows(rows_a);
  db = dout.bottomRows(dout.rows() - rows_a);
}

template <typename T>
[[nodiscard]] Mat<T> slice_rows(const Mat<T> &a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of a " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " tensor");
  }
  return a.middleRows(begin, count);
}

template <typename T>
[[nodiscard]] Mat<T> slice_rows_backward(const Mat<T> &dout, Eigen::Index rows, Eigen::Index begin) {
  Mat<T> da = Mat<T>::Zero(rows, dout.cols());
  da.middleRows(begin, dout.rows()) = dout;
  return da;
}

// y = x W + b, with W (in x out) and b (1 x out).
template <typename T>
[[nodiscard]] Mat<T> linear(const Mat<T> &x, const Mat<T> &w, const Mat<T> &b) {
  if (x.cols() != w.rows()) {
    detail::shape_mismatch("linear", x, w);
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    detail::shape_mismatch("linear bias", w, b);
  }
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
void linear_backward(const Mat<T> &dy, const Mat<T> &x, const Mat<T> &w, Mat<T> *dx, Mat<T> &dw, Mat<T> &db) {
  if (dx != nullptr) {
    dx->resize(x.rows(), x.cols());
    dx->noalias() = dy * w.transpose();
  }
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
}

template <typename T>
[[nodiscard]] Mat<T> softmax_rows(const Mat<T> &x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

template <typename T>
[[nodiscard]] Mat<T> softmax_rows_backward(const Mat<T> &dy, const Mat<T> &y) {
  Mat<T> dx(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const T dot = dy.row(i).dot(y.row(i));
    dx.row(i) = y.row(i).array() * (dy.row(i).array() - dot);
  }
  return dx;
}

template <typename T>
struct LayerNormCache {
  Mat<T> xhat{};
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd{};
};

template <typename T>
[[nodiscard]] Mat<T> layer_norm(const Mat<T> &x, const Mat<T> &gamma, const Mat<T> &beta, T eps,
                                LayerNormCache<T> *cache = nullptr) {
  if (gamma.cols() != x.cols() || beta.cols() != x.cols()) {
    detail::shape_mismatch("layer_norm", x, gamma);
  }
  const auto d = static_cast<T>(x.cols());
  Mat<T> xhat(x.rows(), x.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mean = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mean).eval();
    const T var = centered.square().sum() / d;
    rstd(i) = T{1} / std::sqrt(var + eps);
    xhat.row(i) = centered * rstd(i);
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
[[nodiscard]] Mat<T> layer_norm_backward(const Mat<T> &dy, const LayerNormCache<T> &cache, const Mat<T> &gamma,
                                         Mat<T> &dgamma, Mat<T> &dbeta) {
  const auto &xhat = cache.xhat;
  dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat<T> g = dy.array().rowwise() * gamma.row(0).array();
  const auto d = static_cast<T>(dy.cols());
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T mg = g.row(i).sum() / d;
    const T mgx = g.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = cache.rstd(i) * (g.row(i).array() - mg - xhat.row(i).array() * mgx);
  }
  return dx;
}

// Exact (erf) GELU.
template <typename T>
[[nodiscard]] Mat<T> gelu(const Mat<T> &x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  return (T{0.5} * x.array() * (T{1} + (x.array() * inv_sqrt2).erf())).matrix();
}

template <typename T>
[[nodiscard]] Mat<T> gelu_backward(const Mat<T> &dy, const Mat<T> &x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  const auto cdf = T{0.5} * (T{1} + (x.array() * inv_sqrt2).erf());
  const auto pdf = inv_sqrt_2pi * (T{-0.5} * x.array().square()).exp();
  return (dy.array() * (cdf + x.array() * pdf)).matrix();
}

template <typename T>
[[nodiscard]] T sigmoid(T z) {
  return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

// Scaled dot-product attention over `groups` independent sequences of length
// `seq` stacked row-wise in q, k, v (each groups*seq x D), split into `heads`.
// Each query row is streamed against transposed keys and values, so memory
// stays O(seq) per row; backward recomputes the probabilities.
namespace detail {

template <typename T>
void check_attention(const Mat<T> &q, const Mat<T> &k, const Mat<T> &v, Eigen::Index groups, Eigen::Index seq,
                     Eigen::Index heads) {
  const auto d = q.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("attention: embedding dimension " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (q.rows() != groups * seq) {
    throw ShapeError("attention: " + std::to_string(q.rows()) + " rows for " + std::to_string(groups) +
                     " sequences of length " + std::to_string(seq));
  }
  if (k.rows() != q.rows() || k.cols() != d) {
    shape_mismatch("attention keys", q, k);
  }
  if (v.rows() != q.rows() || v.cols() != d) {
    shape_mismatch("attention values", q, v);
  }
}

// out[j] = scale * sum_c w[c] * m(c, j).
template <typename T>
void weighted_rows(const Mat<T> &m, const T *w, T scale, Eigen::Array<T, 1, Eigen::Dynamic> &out) {
  const auto rows = m.rows();
  const auto cols = m.cols();
  out.resize(cols);
  const T *base = m.data();
  T *o = out.data();
  const T w0 = w[0] * scale;
  for (Eigen::Index j = 0; j < cols; ++j) {
    o[j] = base[j] * w0;
  }
  for (Eigen::Index c = 1; c < rows; ++c) {
    const T wc = w[c] * scale;
    const T *r = base + c * cols;
    for (Eigen::Index j = 0; j < cols; ++j) {
      o[j] += r[j] * wc;
    }
  }
}

// Unnormalized exp scores of query row `qi` against kt (dh x seq); returns the sum.
template <typename T>
T attention_scores(const T *qi, const Mat<T> &kt, T scale, Eigen::Array<T, 1, Eigen::Dynamic> &s) {
  detail::weighted_rows(kt, qi, scale, s);
  const T mx = s.maxCoeff();
  s = (s - mx).exp();
  return s.sum();
}

}  // namespace detail

template <typename T>
[[nodiscard]] Mat<T> attention_core(const Mat<T> &q, const Mat<T> &k, const Mat<T> &v, Eigen::Index groups,
                                    Eigen::Index seq, Eigen::Index heads) {
  detail::check_attention(q, k, v, groups, seq, heads);
  const auto d = q.cols();
  const auto dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Mat<T> out(q.rows(), d);
  Mat<T> kt(dh, seq);
  Mat<T> vt(dh, seq);
  Eigen::Array<T, 1, Eigen::Dynamic> s(seq);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      kt = k.block(g * seq, h * dh, seq, dh).transpose();
      vt = v.block(g * seq, h * dh, seq, dh).transpose();
      for (Eigen::Index i = 0; i < seq; ++i) {
        const auto row = g * seq + i;
        const T inv = T{1} / detail::attention_scores(&q(row, h * dh), kt, scale, s);
        for (Eigen::Index c = 0; c < dh; ++c) {
          out(row, h * dh + c) = (s * vt.row(c).array()).sum() * inv;
        }
      }
    }
  }
  return out;
}

// `out` is the forward result; it supplies rowsum(dP * P) = dO . O.
template <typename T>
void attention_core_backward(const Mat<T> &dout, const Mat<T> &q, const Mat<T> &k, const Mat<T> &v,
                             const Mat<T> &out, Eigen::Index groups, Eigen::Index seq, Eigen::Index heads, Mat<T> &dq,
                             Mat<T> &dk, Mat<T> &dv) {
  detail::check_attention(q, k, v, groups, seq, heads);
  if (dout.rows() != q.rows() || dout.cols() != q.cols()) {
    detail::shape_mismatch("attention backward", dout, q);
  }
  const auto d = q.cols();
  const auto dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  dq.resize(q.rows(), d);
  dk.resize(k.rows(), d);
  dv.resize(v.rows(), d);
  Mat<T> kt(dh, seq);
  Mat<T> vt(dh, seq);
  Mat<T> dkt(dh, seq);
  Mat<T> dvt(dh, seq);
  Eigen::Array<T, 1, Eigen::Dynamic> p(seq);
  Eigen::Array<T, 1, Eigen::Dynamic> dp(seq);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      kt = k.block(g * seq, h * dh, seq, dh).transpose();
      vt = v.block(g * seq, h * dh, seq, dh).transpose();
      dkt.setZero();
      dvt.setZero();
      for (Eigen::Index i = 0; i < seq; ++i) {
        const auto row = g * seq + i;
        const T *qi = &q(row, h * dh);
        const T *doi = &dout(row, h * dh);
        const T inv = T{1} / detail::attention_scores(qi, kt, scale, p);
        p *= inv;
        T di = 0;
        for (Eigen::Index c = 0; c < dh; ++c) {
          dvt.row(c).array() += doi[c] * p;
          di += doi[c] * out(row, h * dh + c);
        }
        detail::weighted_rows(vt, doi, T{1}, dp);
        dp = p * (dp - di) * scale;
        for (Eigen::Index c = 0; c < dh; ++c) {
          dq(row, h * dh + c) = (dp * kt.row(c).array()).sum();
          dkt.row(c).array() += dp * qi[c];
        }
      }
      dk.block(g * seq, h * dh, seq, dh) = dkt.transpose();
      dv.block(g * seq, h * dh, seq, dh) = dvt.transpose();
    }
  }
}

template <typename T>
struct AttentionWeights {
  const Mat<T> &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo;
};

template <typename T>
struct MhaCache {
  Mat<T> x{}, q{}, k{}, v{}, o{};
};

// Multi-head self-attention: linear projections, attention_core, output projection.
template <typename T>
[[nodiscard]] Mat<T> multi_head_attention(const Mat<T> &x, const AttentionWeights<T> &w, Eigen::Index groups,
                                          Eigen::Index seq, Eigen::Index heads, MhaCache<T> *cache = nullptr) {
  if (x.cols() % heads != 0) {
    throw ShapeError("attention: embedding dimension " + std::to_string(x.cols()) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  Mat<T> q = linear(x, w.wq, w.bq);
  Mat<T> k = linear(x, w.wk, w.bk);
  Mat<T> v = linear(x, w.wv, w.bv);
  Mat<T> o = attention_core(q, k, v, groups, seq, heads);
  Mat<T> y = linear(o, w.wo, w.bo);
  if (cache != nullptr) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
  }
  return y;
}

template <typename T>
struct AttentionGrads {
  Mat<T> &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo;
};

template <typename T>
[[nodiscard]] Mat<T> multi_head_attention_backward(const Mat<T> &dy, const AttentionWeights<T> &w,
                                                   const AttentionGrads<T> &gw, Eigen::Index groups,
                                                   Eigen::Index seq, Eigen::Index heads, const MhaCache<T> &c) {
  Mat<T> dout;
  linear_backward(dy, c.o, w.wo, &dout, gw.wo, gw.bo);
  Mat<T> dq, dk, dv;
  attention_core_backward(dout, c.q, c.k, c.v, c.o, groups, seq, heads, dq, dk, dv);
  Mat<T> dx, tmp;
  linear_backward(dq, c.x, w.wq, &dx, gw.wq, gw.bq);
  linear_backward(dk, c.x, w.wk, &tmp, gw.wk, gw.bk);
  dx += tmp;
  linear_backward(dv, c.x, w.wv, &tmp, gw.wv, gw.bv);
  dx += tmp;
  return dx;
}

}  // namespace bfkit
