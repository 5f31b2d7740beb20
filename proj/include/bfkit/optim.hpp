#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfkit/kernels.hpp"

namespace bfkit {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct AdamState {
  double lr{5e-4};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  std::size_t step{0};
  std::vector<Mat<T>> m{};
  std::vector<Mat<T>> v{};
};

// Standard Adam with bias correction. Throws before touching any parameter
// when a gradient entry is NaN or infinite; `names` labels the diagnostics.
template <typename T>
void adam_step(const std::vector<Mat<T> *> &params, const std::vector<const Mat<T> *> &grads, AdamState<T> &st,
               const std::vector<std::string> &names = {}) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols()) {
      detail::shape_mismatch("adam", *params[i], *grads[i]);
    }
    if (!grads[i]->allFinite()) {
      const auto label = i < names.size() ? names[i] : "#" + std::to_string(i);
      throw NonFiniteGradient("non-finite gradient in parameter " + label + " at step " +
                              std::to_string(st.step + 1));
    }
  }
  if (st.m.empty()) {
    for (const auto *p : params) {
      st.m.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      st.v.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
  }
  ++st.step;
  const auto t = static_cast<double>(st.step);
  const auto c1 = static_cast<T>(1.0 - std::pow(st.beta1, t));
  const auto c2 = static_cast<T>(1.0 - std::pow(st.beta2, t));
  const auto b1 = static_cast<T>(st.beta1);
  const auto b2 = static_cast<T>(st.beta2);
  const auto lr = static_cast<T>(st.lr);
  const auto eps = static_cast<T>(st.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto &m = st.m[i];
    auto &v = st.v[i];
    const auto &g = *grads[i];
    m = b1 * m + (T{1} - b1) * g;
    v = b2 * v + (T{1} - b2) * g.cwiseProduct(g);
    params[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace bfkit
