#ifndef VOXSEG_GRADCHECK_HPP
#define VOXSEG_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  std::string worst;  // "tensor 2 elem 14: analytic=..., numeric=..."

  bool passed(double tol) const { return max_rel_err < tol; }
};

// Central-difference gradient verification, the independent oracle for
// every differentiable op: (f(x+h)-f(x-h))/2h against the analytic
// gradient, relative error with denominator max(|analytic|,|numeric|,1e-8).
// Meant to run at 64-bit precision.
//
//   forward_value  pure re-evaluation of the scalar output
//   compute_grads  zeroes gradients, rebuilds the graph, runs backward
//   inputs         tensors whose gradients get verified
//   max_per_tensor 0 checks every element; otherwise a seeded random
//                  subset of that size per tensor
inline GradCheckReport grad_check(const std::function<double()>& forward_value,
                                  const std::function<void()>& compute_grads,
                                  std::vector<Tensor<double>> inputs,
                                  double h = 1e-5, int64_t max_per_tensor = 0,
                                  uint64_t subsample_seed = 0) {
  GradCheckReport report;
  compute_grads();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    t.ensure_grad();
    analytic.emplace_back(t.grad(), t.grad() + t.numel());
  }

  Rng rng(subsample_seed);
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    const int64_t n = t.numel();
    std::vector<int64_t> picks;
    if (max_per_tensor > 0 && n > max_per_tensor) {
      picks.reserve(static_cast<size_t>(max_per_tensor));
      for (int64_t i = 0; i < max_per_tensor; ++i) picks.push_back(rng.uniform_int(0, n - 1));
    } else {
      picks.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) picks[static_cast<size_t>(i)] = i;
    }
    for (int64_t idx : picks) {
      double* x = t.data() + idx;
      const double saved = *x;
      *x = saved + h;
      const double fp = forward_value();
      *x = saved - h;
      const double fm = forward_value();
      *x = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[ti][static_cast<size_t>(idx)];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = format_msg("tensor ", ti, " elem ", idx, ": analytic=", a, ", numeric=", numeric);
      }
    }
  }
  return report;
}

}  // namespace voxseg

#endif  // VOXSEG_GRADCHECK_HPP
