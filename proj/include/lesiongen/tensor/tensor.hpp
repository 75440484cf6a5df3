#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lesiongen/error.hpp"

namespace lesiongen {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& dims);
std::string shape_string(const Shape& dims);

/// Dense row-major array. Scalars have rank 0.
///
/// Construction from external data rejects NaN/Inf; arithmetic that lives
/// inside the graph does not re-check every intermediate.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : data_(1, T(0)) {}
  explicit BasicTensor(Shape dims, T fill = T(0));
  BasicTensor(Shape dims, std::vector<T> data);

  static BasicTensor zeros(Shape dims) { return BasicTensor(std::move(dims), T(0)); }
  static BasicTensor ones(Shape dims) { return BasicTensor(std::move(dims), T(1)); }
  static BasicTensor full(Shape dims, T v) { return BasicTensor(std::move(dims), v); }
  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  const Shape& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Row-major multi-index access.
  T& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  T item() const;
  BasicTensor reshaped(Shape dims) const;
  bool all_finite() const;
  void require_finite(const std::string& what) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<int> idx) const;

  Shape dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

/// Largest absolute elementwise difference; dims must match.
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.dims()) + " vs " + shape_string(b.dims()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace lesiongen
