#include "saf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace saf {

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void require_shape(const Shape& actual, const Shape& expected, const std::string& what) {
  if (actual == expected) return;
  std::ostringstream os;
  os << what << ": expected shape " << shape_string(expected) << ", got " << shape_string(actual);
  if (actual.size() == expected.size()) {
    os << " (mismatched axes:";
    for (std::size_t i = 0; i < actual.size(); ++i)
      if (actual[i] != expected[i]) os << ' ' << i;
    os << ')';
  }
  throw DimensionError(os.str());
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    throw DimensionError("tensor: shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_product(shape_)) + " elements but " +
                         std::to_string(data_.size()) + " were supplied");
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  return shape_[axis];
}

template <class T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

template <class T>
const T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

template <class T>
Tensor<T> Tensor<T>::sample(std::size_t n) const {
  if (shape_.empty() || n >= shape_[0])
    throw DimensionError("tensor: sample index " + std::to_string(n) + " out of range for shape " +
                         shape_string(shape_));
  Shape s = shape_;
  s[0] = 1;
  const std::size_t stride = data_.size() / shape_[0];
  std::vector<T> out(data_.begin() + n * stride, data_.begin() + (n + 1) * stride);
  return Tensor(std::move(s), std::move(out));
}

template <class T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_product(shape) != data_.size())
    throw DimensionError("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <class T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace saf
