// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sga/core/error.hpp"

namespace sga {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Row-major dense array of floating-point scalars.
///
/// Rank-2 arrays are matrices (rows x cols); rank-3 arrays hold grid features
/// (H x W x channels). Value semantics: copies are deep.
template <std::floating_point T>
class Array {
 public:
  using value_type = T;

  Array() = default;

  explicit Array(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Array(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("array data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Array matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return Array({rows, cols}, fill);
  }

  static Array from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Array({r, c}, std::move(data));
  }

  static Array from_vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Array({n}, std::move(values));
  }

  static Array identity(std::size_t n) {
    Array out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<T> row(std::size_t r) {
    const std::size_t c = shape_[1];
    return {data_.data() + r * c, c};
  }
  std::span<const T> row(std::size_t r) const {
    const std::size_t c = shape_[1];
    return {data_.data() + r * c, c};
  }

  // Same data, new shape of equal element count.
  Array reshaped(Shape shape) const {
    return Array(std::move(shape), data_);
  }

  template <std::floating_point U>
  Array<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Array<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using DenseArray = Array<float>;

template <std::floating_point T>
T max_abs_diff(const Array<T>& a, const Array<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace sga
