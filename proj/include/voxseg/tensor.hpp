#ifndef VOXSEG_TENSOR_HPP
#define VOXSEG_TENSOR_HPP

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "voxseg/common.hpp"

namespace voxseg {

// Dense contiguous N-d array. Network tensors use the layout
// [batch, channel, depth, height, width] with the last axis fastest.
//
// A Tensor is a cheap handle onto shared storage: copies alias the same
// buffer, which is what lets backward closures accumulate gradients at
// fan-out. Use clone() for a deep copy. The gradient buffer has the same
// shape as the data and is allocated lazily.
template <typename T>
class Tensor {
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until ensure_grad()
    bool requires_grad = false;
  };

public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    for (int64_t d : shape)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    s_->shape = std::move(shape);
    s_->data.assign(static_cast<size_t>(shape_numel(s_->shape)), T(0));
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> values) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError(format_msg("data length ", values.size(), " does not match shape ", shape_str(shape)));
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(values);
    return t;
  }

  bool valid() const { return static_cast<bool>(s_); }

  const Shape& shape() const { return s_->shape; }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  int64_t dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(s_->data.size()); }

  T* data() { return s_->data.data(); }
  const T* data() const { return s_->data.data(); }
  std::vector<T>& vec() { return s_->data; }
  const std::vector<T>& vec() const { return s_->data; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  bool has_grad() const { return !s_->grad.empty(); }

  // Allocates the gradient buffer (zero-filled) if not present.
  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  }

  T* grad() { return s_->grad.data(); }
  const T* grad() const { return s_->grad.data(); }
  std::vector<T>& grad_vec() { return s_->grad; }

  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  void drop_grad() { s_->grad.clear(); }

  // Deep copy of data (gradient is not copied).
  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  // Value of a single-element tensor.
  T item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, shape " + shape_str(shape()));
    return s_->data[0];
  }

private:
  std::shared_ptr<Storage> s_;
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* what) {
  const T* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw NumericError(format_msg("non-finite value in ", what, " at flat index ", i));
  }
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(format_msg(what, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

}  // namespace voxseg

#endif  // VOXSEG_TENSOR_HPP
