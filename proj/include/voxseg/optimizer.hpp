#ifndef VOXSEG_OPTIMIZER_HPP
#define VOXSEG_OPTIMIZER_HPP

#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

// Plain SGD with heavy-ball momentum:
//   v <- momentum * v + grad
//   p <- p - lr * v
// Velocity buffers are owned here and belong in checkpoints so a resumed
// run continues the exact trajectory.
template <typename T>
class SgdMomentum {
public:
  SgdMomentum(std::vector<Tensor<T>> params, T momentum)
      : params_(std::move(params)), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (auto& p : params_) velocity_.emplace_back(p.shape());
  }

  void step(T lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      Tensor<T>& v = velocity_[i];
      const T* gptr = p.has_grad() ? p.grad() : nullptr;
      T* vp = v.data();
      T* pp = p.data();
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        vp[j] = momentum_ * vp[j] + (gptr ? gptr[j] : T(0));
        pp[j] -= lr * vp[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  T momentum() const { return momentum_; }
  std::vector<Tensor<T>>& params() { return params_; }
  std::vector<Tensor<T>>& velocities() { return velocity_; }

private:
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> velocity_;
  T momentum_;
};

}  // namespace voxseg

#endif  // VOXSEG_OPTIMIZER_HPP
