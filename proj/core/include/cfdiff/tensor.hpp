// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cfdiff::nd {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense row-major matrix. Instantiated for float (training) and double
/// (gradient checking).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0));
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Shape shape() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(T v);
  bool all_finite() const;

  /// Same data, new shape with identical element count.
  Tensor reshaped(std::size_t rows, std::size_t cols) const;

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Largest |a - b| over all entries; shapes must match.
template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace cfdiff::nd
