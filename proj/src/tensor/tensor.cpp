#include "lesiongen/tensor/tensor.hpp"

#include <sstream>

namespace lesiongen {

std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw ShapeError("non-positive dimension in " + shape_string(dims));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape dims, T fill) : dims_(std::move(dims)), data_(shape_size(dims_), fill) {
  if (!std::isfinite(static_cast<double>(fill))) throw NumericError("tensor fill value is not finite");
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
  if (data_.size() != shape_size(dims_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                     shape_string(dims_));
  }
  require_finite("tensor construction");
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor with dims " + shape_string(dims_));
  return data_[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape dims) const {
  if (shape_size(dims) != data_.size()) {
    throw ShapeError("reshape " + shape_string(dims_) + " -> " + shape_string(dims));
  }
  BasicTensor out;
  out.dims_ = std::move(dims);
  out.data_ = data_;
  return out;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename T>
void BasicTensor<T>::require_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError(what + ": non-finite value");
}

template <typename T>
std::size_t BasicTensor<T>::offset(std::initializer_list<int> idx) const {
  if (idx.size() != dims_.size()) throw ShapeError("index rank mismatch for " + shape_string(dims_));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= dims_[axis]) throw ShapeError("index out of range for " + shape_string(dims_));
    off = off * static_cast<std::size_t>(dims_[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return off;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace lesiongen
