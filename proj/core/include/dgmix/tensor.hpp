#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgmix/errors.hpp"

namespace dgmix {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense n-dimensional array, row-major. Scalar is double by default across the
/// project; float is available as a reduced-precision mode for long training runs.
template <typename Scalar>
struct TensorT {
  Shape shape;
  std::vector<Scalar> data;

  TensorT() = default;

  explicit TensorT(Shape s, Scalar fill = Scalar(0))
      : shape(std::move(s)), data(shape_size(shape), fill) {
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
    }
  }

  static TensorT from(Shape s, std::vector<Scalar> values) {
    TensorT t;
    if (shape_size(s) != values.size()) {
      std::ostringstream os;
      os << "tensor data length " << values.size() << " does not match shape " << shape_str(s);
      throw ShapeError(os.str());
    }
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t extent(std::size_t axis) const { return shape[axis]; }

  Scalar& operator[](std::size_t i) { return data[i]; }
  Scalar operator[](std::size_t i) const { return data[i]; }

  Scalar* ptr() { return data.data(); }
  const Scalar* ptr() const { return data.data(); }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (Scalar v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(Scalar v) { std::fill(data.begin(), data.end(), v); }

  /// Reinterpret under a new shape with the same element count.
  TensorT reshaped(Shape s) const {
    if (shape_size(s) != data.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    }
    TensorT t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  template <typename Other>
  TensorT<Other> cast() const {
    TensorT<Other> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<Other>(data[i]);
    return t;
  }
};

using Tensor = TensorT<double>;

/// Gradients of one layer: input gradient plus one tensor per parameter, in the
/// layer's parameter order.
template <typename Scalar>
struct LayerGradsT {
  TensorT<Scalar> grad_input;
  std::vector<TensorT<Scalar>> grad_params;
};

using LayerGrads = LayerGradsT<double>;

namespace detail {

template <typename Scalar>
inline void require_rank(const TensorT<Scalar>& t, std::size_t r, const char* who, const char* what) {
  if (t.rank() != r) {
    std::ostringstream os;
    os << who << ": " << what << " must have rank " << r << ", got shape " << shape_str(t.shape);
    throw ShapeError(os.str());
  }
}

}  // namespace detail

}  // namespace dgmix
