#ifndef VOXSEG_BATCHNORM_HPP
#define VOXSEG_BATCHNORM_HPP

#include <cmath>
#include <vector>

#include "voxseg/graph.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Per-channel batch normalization over (B,D,H,W). In training mode the
// batch statistics normalize the input and update the running estimates by
// exponential moving average (new = (1-m)*old + m*batch, biased variance);
// eval mode normalizes with the running estimates. running_mean/var are
// buffers, not parameters: no gradient flows into them.
template <typename T>
Tensor<T> batchnorm3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, bool training,
                      T momentum = T(kBatchNormMomentum), T eps = T(kBatchNormEps)) {
  if (x.ndim() != 5) throw ShapeError("batchnorm3d: input must be [B,C,D,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1);
  const int64_t sp = x.dim(2) * x.dim(3) * x.dim(4);
  const int64_t n = B * sp;  // reduction size per channel
  for (const Tensor<T>* t : {&gamma, &beta, &running_mean, &running_var})
    if (t->ndim() != 1 || t->dim(0) != C)
      throw ShapeError(format_msg("batchnorm3d: expected per-channel vectors of length ", C));

  std::vector<T> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const T* xc = x.data() + (b * C + c) * sp;
        for (int64_t i = 0; i < sp; ++i) acc += static_cast<double>(xc[i]);
      }
      const double m = acc / static_cast<double>(n);
      double vacc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const T* xc = x.data() + (b * C + c) * sp;
        for (int64_t i = 0; i < sp; ++i) {
          const double d = static_cast<double>(xc[i]) - m;
          vacc += d * d;
        }
      }
      mean[static_cast<size_t>(c)] = static_cast<T>(m);
      var[static_cast<size_t>(c)] = static_cast<T>(vacc / static_cast<double>(n));
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mean[static_cast<size_t>(c)];
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * var[static_cast<size_t>(c)];
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean.data()[c];
      var[static_cast<size_t>(c)] = running_var.data()[c];
    }
  }

  const bool rec = g && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor<T> y(x.shape(), rec);
  std::vector<T> inv_std(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c)
    inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* xc = x.data() + (b * C + c) * sp;
      T* yc = y.data() + (b * C + c) * sp;
      const T mu = mean[static_cast<size_t>(c)];
      const T is = inv_std[static_cast<size_t>(c)];
      const T gma = gamma.data()[c];
      const T bta = beta.data()[c];
      for (int64_t i = 0; i < sp; ++i) yc[i] = gma * (xc[i] - mu) * is + bta;
    }
  check_finite(y, "batchnorm3d");

  if (rec) {
    auto xi = x; auto gi = gamma; auto bi = beta; auto yo = y;
    g->record("batchnorm3d", [xi, gi, bi, yo, mean, inv_std, training, B, C, sp, n]() mutable {
      if (!yo.has_grad()) return;
      const T* dy = yo.grad();
      // per-channel sums of dy and dy*xhat, shared by all three gradients
      std::vector<double> sum_dy(static_cast<size_t>(C), 0.0), sum_dy_xhat(static_cast<size_t>(C), 0.0);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const T* xc = xi.data() + (b * C + c) * sp;
          const T* dyc = dy + (b * C + c) * sp;
          const T mu = mean[static_cast<size_t>(c)];
          const T is = inv_std[static_cast<size_t>(c)];
          double s = 0.0, sx = 0.0;
          for (int64_t i = 0; i < sp; ++i) {
            s += static_cast<double>(dyc[i]);
            sx += static_cast<double>(dyc[i]) * static_cast<double>((xc[i] - mu) * is);
          }
          sum_dy[static_cast<size_t>(c)] += s;
          sum_dy_xhat[static_cast<size_t>(c)] += sx;
        }
      if (gi.requires_grad()) {
        gi.ensure_grad();
        for (int64_t c = 0; c < C; ++c) gi.grad()[c] += static_cast<T>(sum_dy_xhat[static_cast<size_t>(c)]);
      }
      if (bi.requires_grad()) {
        bi.ensure_grad();
        for (int64_t c = 0; c < C; ++c) bi.grad()[c] += static_cast<T>(sum_dy[static_cast<size_t>(c)]);
      }
      if (xi.requires_grad()) {
        xi.ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const T* xc = xi.data() + (b * C + c) * sp;
            const T* dyc = dy + (b * C + c) * sp;
            T* dxc = xi.grad() + (b * C + c) * sp;
            const T mu = mean[static_cast<size_t>(c)];
            const T is = inv_std[static_cast<size_t>(c)];
            const T gma = gi.data()[c];
            if (training) {
              const T mdy = static_cast<T>(sum_dy[static_cast<size_t>(c)] / static_cast<double>(n));
              const T mdyx = static_cast<T>(sum_dy_xhat[static_cast<size_t>(c)] / static_cast<double>(n));
              for (int64_t i = 0; i < sp; ++i) {
                const T xhat = (xc[i] - mu) * is;
                dxc[i] += gma * is * (dyc[i] - mdy - xhat * mdyx);
              }
            } else {
              for (int64_t i = 0; i < sp; ++i) dxc[i] += gma * is * dyc[i];
            }
          }
      }
    });
  }
  return y;
}

}  // namespace voxseg

#endif  // VOXSEG_BATCHNORM_HPP
