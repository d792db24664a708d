#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sgac/errors.hpp"

namespace sgac {

using Index = Eigen::Index;

/// Row-major extents, outermost first. Images are [channels, height, width].
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index operator[](Index i) const { return dims_[static_cast<std::size_t>(i)]; }
  Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
  }
  const std::vector<Index>& dims() const { return dims_; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  std::vector<Index> dims_;
};

/// Dense n-dimensional array with flat row-major storage.
template <typename Scalar>
class BasicTensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_.numel())) {}
  BasicTensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.numel() != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static BasicTensor constant(Shape shape, Scalar value) {
    const Index n = shape.numel();
    return BasicTensor(std::move(shape), Array::Constant(n, value));
  }
  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{1}, Array::Constant(1, value)); }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  const Array& data() const { return data_; }
  Array& data() { return data_; }

  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator[](Index i) { return data_[i]; }

  /// Element of a rank-3 [C,H,W] tensor.
  Scalar at(Index c, Index h, Index w) const { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
  Scalar& at(Index c, Index h, Index w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }

  bool all_finite() const { return data_.isFinite().all(); }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

 private:
  Shape shape_;
  Array data_;
};

using Tensor = BasicTensor<double>;

template <typename Scalar>
BasicTensor<Scalar> round(const BasicTensor<Scalar>& t) {
  return BasicTensor<Scalar>(t.shape(), t.data().round());
}

template <typename Scalar>
BasicTensor<Scalar> floor(const BasicTensor<Scalar>& t) {
  return BasicTensor<Scalar>(t.shape(), t.data().floor());
}

template <typename Scalar>
bool is_integer_valued(const BasicTensor<Scalar>& t) {
  return (t.data() == t.data().round()).all();
}

}  // namespace sgac
