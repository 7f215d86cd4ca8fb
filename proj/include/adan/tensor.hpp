#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adan/error.hpp"

namespace adan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. `float` is the compute type; `double` is used by
/// the gradient checker.
template <class Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  BasicTensor(std::initializer_list<std::size_t> shape, std::initializer_list<Real> values)
      : BasicTensor(Shape(shape), std::vector<Real>(values)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(std::size_t i0, std::size_t i1) { return data_[i0 * shape_[1] + i1]; }
  const Real& at(std::size_t i0, std::size_t i1) const { return data_[i0 * shape_[1] + i1]; }
  Real& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
    return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
  }
  const Real& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
    return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
  }

  /// Same data under a new shape of equal volume.
  BasicTensor reshaped(Shape shape) const& {
    check_volume(shape);
    return BasicTensor(std::move(shape), data_);
  }
  BasicTensor reshaped(Shape shape) && {
    check_volume(shape);
    shape_ = std::move(shape);
    return std::move(*this);
  }

  /// Rows [begin, end) along axis 0.
  BasicTensor slice_rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || begin > end || end > shape_[0]) {
      throw DimensionError("row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                           ") out of range for shape " + shape_string(shape_));
    }
    const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape out = shape_;
    out[0] = end - begin;
    return BasicTensor(std::move(out), std::vector<Real>(data_.begin() + begin * row, data_.begin() + end * row));
  }

  std::span<const Real> row(std::size_t i) const {
    const std::size_t n = data_.size() / shape_[0];
    return {data_.data() + i * n, n};
  }
  std::span<Real> row(std::size_t i) {
    const std::size_t n = data_.size() / shape_[0];
    return {data_.data() + i * n, n};
  }

  template <class Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void check_volume(const Shape& shape) const {
    if (shape_volume(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Stacks tensors of identical trailing shape along axis 0.
template <class Real>
BasicTensor<Real> concat_rows(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat_rows: trailing shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Shape out = a.shape();
  out[0] += b.dim(0);
  std::vector<Real> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.storage().begin(), a.storage().end());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return BasicTensor<Real>(std::move(out), std::move(data));
}

}  // namespace adan
