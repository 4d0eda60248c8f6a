#ifndef VOXSEG_TESTS_TEST_UTIL_HPP
#define VOXSEG_TESTS_TEST_UTIL_HPP

#include <functional>
#include <vector>

#include "voxseg/gradcheck.hpp"
#include "voxseg/graph.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"

namespace vt {

template <typename T>
void fill_uniform(voxseg::Tensor<T>& t, voxseg::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_normal(voxseg::Tensor<T>& t, voxseg::Rng& rng, double mean = 0.0, double sd = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.normal(mean, sd));
}

// Verifies an op's analytic gradients against central differences by
// projecting the op output onto a fixed random direction (so the check
// reduces to a scalar regardless of the output shape).
inline voxseg::GradCheckReport check_op_grad(
    const std::function<voxseg::Tensor<double>(voxseg::Graph<double>*)>& op,
    std::vector<voxseg::Tensor<double>> inputs, uint64_t seed, double h = 1e-5,
    int64_t max_per_tensor = 0) {
  voxseg::Tensor<double> probe = op(nullptr);
  std::vector<double> proj(static_cast<size_t>(probe.numel()));
  voxseg::Rng prng(voxseg::Rng::mix(seed, 0xabcdef));
  for (auto& v : proj) v = prng.uniform(-1.0, 1.0);

  auto forward_value = [&]() {
    voxseg::Tensor<double> y = op(nullptr);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += proj[static_cast<size_t>(i)] * y.data()[i];
    return acc;
  };
  auto compute_grads = [&]() {
    for (auto& t : inputs) {
      t.ensure_grad();
      t.zero_grad();
    }
    voxseg::Graph<double> g;
    voxseg::Tensor<double> y = op(&g);
    y.ensure_grad();
    for (int64_t i = 0; i < y.numel(); ++i) y.grad()[i] = proj[static_cast<size_t>(i)];
    g.backward();
  };
  return voxseg::grad_check(forward_value, compute_grads, std::move(inputs), h, max_per_tensor, seed);
}

}  // namespace vt

#endif
