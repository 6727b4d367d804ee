// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "cfdiff/errors.hpp"

namespace cfdiff::nd {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")";
}

template <class T>
Tensor<T>::Tensor(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <class T>
Tensor<T>::Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " +
                     to_string(Shape{rows, cols}));
  }
}

template <class T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
  return t;
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
Tensor<T> Tensor<T>::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != data_.size()) {
    throw ShapeError("reshape " + to_string(shape()) + " -> " + to_string(Shape{rows, cols}));
  }
  return Tensor(rows, cols, data_);
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace cfdiff::nd
