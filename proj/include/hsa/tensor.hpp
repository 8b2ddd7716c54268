#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace hsa {

using Shape = std::vector<std::size_t>;

enum class Precision { single, double_ };

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array. data().size() always equals numel(shape()).
template <class T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_))
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + to_string(shape_));
  }

  static constexpr Precision precision() {
    return std::is_same_v<T, float> ? Precision::single : Precision::double_;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Elements of leading index i (a row of a matrix, an image of a batch).
  std::span<T> row(std::size_t i) {
    const std::size_t stride = row_stride();
    return {data_.data() + i * stride, stride};
  }
  std::span<const T> row(std::size_t i) const {
    const std::size_t stride = row_stride();
    return {data_.data() + i * stride, stride};
  }
  std::size_t row_stride() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
      throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Rows [begin, end) of the leading axis.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin > end || end > t.dim(0))
    throw std::out_of_range("slice_rows: range outside " + to_string(t.shape()));
  Shape s = t.shape();
  s[0] = end - begin;
  const std::size_t stride = t.row_stride();
  auto first = t.data().begin() + std::ptrdiff_t(begin * stride);
  return Tensor<T>(std::move(s), std::vector<T>(first, first + std::ptrdiff_t((end - begin) * stride)));
}

/// Stacks tensors of equal trailing shape along the leading axis.
template <class T>
Tensor<T> concat_rows(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
  Shape s = parts.front()->shape();
  std::size_t rows = 0;
  for (const auto* p : parts) {
    if (p->rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p->shape().begin() + 1))
      throw std::invalid_argument("concat_rows: trailing shapes differ");
    rows += p->dim(0);
  }
  s[0] = rows;
  std::vector<T> data;
  data.reserve(numel(s));
  for (const auto* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  return Tensor<T>(std::move(s), std::move(data));
}

}  // namespace hsa
