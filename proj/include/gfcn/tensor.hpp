#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>

#include "gfcn/errors.hpp"

namespace gfcn {

using Index = std::ptrdiff_t;

/// Extents of a tensor of rank 0..4. Rank 0 is a scalar with one element.
class Shape {
 public:
  static constexpr Index kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<Index> dims) : Shape(std::span<const Index>(dims.begin(), dims.size())) {}
  explicit Shape(std::span<const Index> dims) {
    if (static_cast<Index>(dims.size()) > kMaxRank) {
      throw ContractViolation("Shape: rank " + std::to_string(dims.size()) + " exceeds 4");
    }
    rank_ = static_cast<Index>(dims.size());
    for (Index i = 0; i < rank_; ++i) {
      if (dims[i] < 1) {
        throw DimensionError("Shape", "axis " + std::to_string(i), "extent must be positive");
      }
      dims_[i] = dims[i];
    }
  }

  Index rank() const { return rank_; }
  Index operator[](Index axis) const { return dims_[axis]; }
  Index numel() const {
    Index n = 1;
    for (Index i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }
  std::span<const Index> dims() const { return {dims_.data(), static_cast<std::size_t>(rank_)}; }

  bool operator==(const Shape& other) const {
    return rank_ == other.rank_ && std::equal(dims_.begin(), dims_.begin() + rank_, other.dims_.begin());
  }

  std::string str() const {
    std::ostringstream out;
    out << '[';
    for (Index i = 0; i < rank_; ++i) out << (i ? "," : "") << dims_[i];
    out << ']';
    return out.str();
  }

 private:
  std::array<Index, kMaxRank> dims_{};
  Index rank_ = 0;
};

/// Axis names for the (batch, height, width, channels) activation layout.
inline std::string nhwc_axis_name(Index axis) {
  static const char* names[] = {"batch", "height", "width", "channels"};
  return axis >= 0 && axis < 4 ? names[axis] : "axis " + std::to_string(axis);
}

/// Dense row-major tensor. Activations use NHWC.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Array::Zero(shape.numel())) {}
  Tensor(const Shape& shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("Tensor", "data", static_cast<long>(shape_.numel()), static_cast<long>(data_.size()));
    }
  }

  static Tensor constant(const Shape& shape, Scalar value) { return Tensor(shape, Array::Constant(shape.numel(), value)); }
  static Tensor scalar(Scalar value) { return constant(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index dim(Index axis) const { return shape_[axis]; }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  Scalar operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  /// Scalar value of a one-element tensor.
  Scalar item() const {
    if (size() != 1) throw ContractViolation("Tensor::item: tensor has " + std::to_string(size()) + " elements");
    return data_[0];
  }

  Tensor reshaped(const Shape& shape) const {
    if (shape.numel() != size()) {
      throw DimensionError("reshape", "numel", static_cast<long>(size()), static_cast<long>(shape.numel()));
    }
    return Tensor(shape, data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  template <typename... I>
  Index offset(I... idx) const {
    static_assert(sizeof...(I) <= 4);
    const Index indices[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t i = 0; i < sizeof...(I); ++i) off = off * shape_[static_cast<Index>(i)] + indices[i];
    return off;
  }

  Shape shape_;
  Array data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws DimensionError naming the first axis on which `a` and `b` differ.
inline void require_same_shape(const std::string& op, const Shape& a, const Shape& b) {
  if (a.rank() != b.rank()) throw DimensionError(op, "rank", static_cast<long>(a.rank()), static_cast<long>(b.rank()));
  for (Index i = 0; i < a.rank(); ++i) {
    if (a[i] != b[i]) {
      throw DimensionError(op, a.rank() == 4 ? nhwc_axis_name(i) : "axis " + std::to_string(i),
                           static_cast<long>(a[i]), static_cast<long>(b[i]));
    }
  }
}

inline void require_rank(const std::string& op, const Shape& s, Index rank) {
  if (s.rank() != rank) throw DimensionError(op, "rank", static_cast<long>(rank), static_cast<long>(s.rank()));
}

}  // namespace gfcn
