#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "saf/error.hpp"

namespace saf {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Image data uses batch-channel-height-width order.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  /// Per-sample slice of the leading axis, as a copy.
  Tensor sample(std::size_t n) const;

  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;
  void fill(T value);
  bool all_finite() const;

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Throws DimensionError unless the two shapes match exactly.
void require_shape(const Shape& actual, const Shape& expected, const std::string& what);

/// Copy of rows [begin, end) of the leading axis.
template <class T>
Tensor<T> slice_leading(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin > end || end > t.dim(0))
    throw DimensionError("slice_leading: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside axis 0 of " + shape_string(t.shape()));
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = end - begin;
  return Tensor<T>(std::move(shape), std::vector<T>(t.raw() + begin * row, t.raw() + end * row));
}

/// Copy of the listed rows of the leading axis, in the listed order.
template <class T>
Tensor<T> gather_leading(const Tensor<T>& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  const std::size_t row = shape.empty() || shape[0] == 0 ? 0 : t.size() / shape[0];
  shape[0] = rows.size();
  Tensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.dim(0)) throw DimensionError("gather_leading: row index out of range on axis 0");
    std::copy_n(t.raw() + rows[i] * row, row, out.raw() + i * row);
  }
  return out;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace saf
