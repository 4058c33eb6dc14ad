#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>

#include "magic/errors.hpp"

namespace magic {

/// Batch, channel, height, width extents. Layout is NCHW, width fastest.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  bool operator==(const Shape&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << "(n=" << s.n << ", c=" << s.c << ", h=" << s.h << ", w=" << s.w << ")";
}

inline std::string to_string(const Shape& s) {
  return "(n=" + std::to_string(s.n) + ", c=" + std::to_string(s.c) + ", h=" + std::to_string(s.h) +
         ", w=" + std::to_string(s.w) + ")";
}

/// Dense NCHW array with an optional same-shaped gradient.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() : Tensor(Shape{1, 1, 1, 1}) {}
  explicit Tensor(Shape shape) : shape_(shape), values_(Array::Zero(static_cast<Eigen::Index>(shape.numel()))) {
    check_extents(shape);
  }
  Tensor(Shape shape, Array values) : shape_(shape), values_(std::move(values)) {
    check_extents(shape);
    if (static_cast<std::size_t>(values_.size()) != shape_.numel()) {
      throw ConfigError("tensor value count " + std::to_string(values_.size()) + " does not match shape " +
                        to_string(shape_));
    }
  }

  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(shape);
    t.values_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }

  Array& values() { return values_; }
  const Array& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  Scalar& at(int n, int c, int y, int x) { return values_[static_cast<Eigen::Index>(offset(n, c, y, x))]; }
  Scalar at(int n, int c, int y, int x) const { return values_[static_cast<Eigen::Index>(offset(n, c, y, x))]; }

  /// Pointer to the `w` contiguous samples of one image row of one channel.
  Scalar* row(int n, int c, int y) { return values_.data() + offset(n, c, y, 0); }
  const Scalar* row(int n, int c, int y) const { return values_.data() + offset(n, c, y, 0); }

  bool has_grad() const { return grad_.has_value(); }
  Array& grad() {
    ensure_grad();
    return *grad_;
  }
  const Array& grad() const {
    if (!grad_) throw UsageError("tensor has no gradient");
    return *grad_;
  }
  void ensure_grad() {
    if (!grad_) grad_ = Array::Zero(values_.size());
  }
  void zero_grad() {
    if (grad_) grad_->setZero();
  }
  void clear_grad() { grad_.reset(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_, values_.template cast<Other>());
    if (grad_) out.grad() = grad_->template cast<Other>();
    return out;
  }

 private:
  static void check_extents(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) throw ConfigError("tensor extents must be positive, got " + to_string(s));
  }

  Shape shape_;
  Array values_;
  std::optional<Array> grad_;
};

/// Element-wise box constraint applied after every optimizer step.
struct Box {
  double lo;
  double hi;
};

/// Named, optionally trainable tensor owned by a model.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  bool trainable = true;
  std::optional<Box> constraint;

  void project() {
    if (!constraint) return;
    // Bounds rounded inward so the stored value never leaves the box.
    Scalar lo = static_cast<Scalar>(constraint->lo), hi = static_cast<Scalar>(constraint->hi);
    if (static_cast<double>(lo) < constraint->lo) lo = std::nextafter(lo, std::numeric_limits<Scalar>::infinity());
    if (static_cast<double>(hi) > constraint->hi) hi = std::nextafter(hi, -std::numeric_limits<Scalar>::infinity());
    tensor.values() = tensor.values().cwiseMax(lo).cwiseMin(hi);
  }

  template <typename Other>
  Parameter<Other> cast() const {
    return Parameter<Other>{name, tensor.template cast<Other>(), trainable, constraint};
  }
};

}  // namespace magic
