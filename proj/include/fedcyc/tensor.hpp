#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedcyc {

/// Ordered list of positive extents, outermost first (row-major).
using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised whenever a NaN or Inf would enter a tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major value grid. Scalars use shape {1}.
///
/// Construction enforces product(shape) == size and finite values; the
/// mutable data() accessor exists for optimizer updates, which re-check
/// finiteness themselves.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  /// Scalar value of a one-element tensor.
  T item() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <typename T>
struct BasicNamedTensor {
  std::string name;
  BasicTensor<T> value;
};

using NamedTensor = BasicNamedTensor<float>;

/// Same shape and identical bit patterns.
template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// max|a - b| / max(max|a|, max|b|), 0 when both are all-zero. Throws
/// ShapeError on shape mismatch. This is the per-tensor relative error used
/// by every equivalence check.
template <typename T>
double relative_error(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Throws NumericError naming `what` if any value is NaN or Inf.
template <typename T>
void require_finite(std::span<const T> values, const std::string& what);

/// Stacks equally-shaped samples along a new leading axis.
template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> samples);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace fedcyc
