#ifndef VOXSEG_OPS_HPP
#define VOXSEG_OPS_HPP

#include <algorithm>

#include "voxseg/graph.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x) {
  const bool rec = g && x.requires_grad();
  Tensor<T> y(x.shape(), rec);
  const T* xp = x.data();
  T* yp = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
  check_finite(y, "relu");
  if (rec) {
    auto xi = x; auto yo = y;
    // subgradient at 0 is 0, so the mask can be taken from the output
    g->record("relu", [xi, yo]() mutable {
      if (!yo.has_grad()) return;
      xi.ensure_grad();
      const T* yp = yo.data();
      const T* dy = yo.grad();
      T* dx = xi.grad();
      const int64_t n = yo.numel();
      for (int64_t i = 0; i < n; ++i)
        if (yp[i] > T(0)) dx[i] += dy[i];
    });
  }
  return y;
}

// Elementwise sum of two same-shape tensors.
template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  const bool rec = g && (a.requires_grad() || b.requires_grad());
  Tensor<T> y(a.shape(), rec);
  const T* ap = a.data();
  const T* bp = b.data();
  T* yp = y.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = ap[i] + bp[i];
  check_finite(y, "add");
  if (rec) {
    auto ai = a; auto bi = b; auto yo = y;
    g->record("add", [ai, bi, yo]() mutable {
      if (!yo.has_grad()) return;
      const T* dy = yo.grad();
      const int64_t n = yo.numel();
      if (ai.requires_grad()) {
        ai.ensure_grad();
        T* da = ai.grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (bi.requires_grad()) {
        bi.ensure_grad();
        T* db = bi.grad();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return y;
}

// Multiplies every element by a constant.
template <typename T>
Tensor<T> scale(Graph<T>* g, const Tensor<T>& x, T c) {
  const bool rec = g && x.requires_grad();
  Tensor<T> y(x.shape(), rec);
  const T* xp = x.data();
  T* yp = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] = c * xp[i];
  check_finite(y, "scale");
  if (rec) {
    auto xi = x; auto yo = y;
    g->record("scale", [xi, yo, c]() mutable {
      if (!yo.has_grad()) return;
      xi.ensure_grad();
      const T* dy = yo.grad();
      T* dx = xi.grad();
      const int64_t n = yo.numel();
      for (int64_t i = 0; i < n; ++i) dx[i] += c * dy[i];
    });
  }
  return y;
}

// Stacks b's channels after a's; all other extents must match.
template <typename T>
Tensor<T> concat_channels(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 5 || b.ndim() != 5)
    throw ShapeError("concat_channels: inputs must be [B,C,D,H,W]");
  for (int i : {0, 2, 3, 4})
    if (a.dim(i) != b.dim(i))
      throw ShapeError(format_msg("concat_channels: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const int64_t sp = a.dim(2) * a.dim(3) * a.dim(4);
  const bool rec = g && (a.requires_grad() || b.requires_grad());
  Tensor<T> y(Shape{B, Ca + Cb, a.dim(2), a.dim(3), a.dim(4)}, rec);
  for (int64_t bb = 0; bb < B; ++bb) {
    std::copy_n(a.data() + bb * Ca * sp, Ca * sp, y.data() + bb * (Ca + Cb) * sp);
    std::copy_n(b.data() + bb * Cb * sp, Cb * sp, y.data() + bb * (Ca + Cb) * sp + Ca * sp);
  }
  if (rec) {
    auto ai = a; auto bi = b; auto yo = y;
    g->record("concat_channels", [ai, bi, yo, B, Ca, Cb, sp]() mutable {
      if (!yo.has_grad()) return;
      const T* dy = yo.grad();
      for (int64_t bb = 0; bb < B; ++bb) {
        const T* base = dy + bb * (Ca + Cb) * sp;
        if (ai.requires_grad()) {
          ai.ensure_grad();
          T* da = ai.grad() + bb * Ca * sp;
          for (int64_t i = 0; i < Ca * sp; ++i) da[i] += base[i];
        }
        if (bi.requires_grad()) {
          bi.ensure_grad();
          T* db = bi.grad() + bb * Cb * sp;
          for (int64_t i = 0; i < Cb * sp; ++i) db[i] += base[Ca * sp + i];
        }
      }
    });
  }
  return y;
}

// 2x2x2 average pooling with stride 2. Spatial extents must be even.
template <typename T>
Tensor<T> avgpool3d(Graph<T>* g, const Tensor<T>& x) {
  if (x.ndim() != 5) throw ShapeError("avgpool3d: input must be [B,C,D,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (D % 2 || H % 2 || W % 2)
    throw ShapeError("avgpool3d: spatial extents must be even, got " + shape_str(x.shape()));
  const int64_t Do = D / 2, Ho = H / 2, Wo = W / 2;
  const bool rec = g && x.requires_grad();
  Tensor<T> y(Shape{B, C, Do, Ho, Wo}, rec);
  const T inv = T(1) / T(8);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * D * H * W;
    T* yc = y.data() + bc * Do * Ho * Wo;
    for (int64_t z = 0; z < Do; ++z)
      for (int64_t yy = 0; yy < Ho; ++yy) {
        const T* r0 = xc + ((2 * z) * H + 2 * yy) * W;
        const T* r1 = xc + ((2 * z) * H + 2 * yy + 1) * W;
        const T* r2 = xc + ((2 * z + 1) * H + 2 * yy) * W;
        const T* r3 = xc + ((2 * z + 1) * H + 2 * yy + 1) * W;
        T* out = yc + (z * Ho + yy) * Wo;
        for (int64_t xx = 0; xx < Wo; ++xx) {
          out[xx] = (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1] +
                     r2[2 * xx] + r2[2 * xx + 1] + r3[2 * xx] + r3[2 * xx + 1]) * inv;
        }
      }
  }
  check_finite(y, "avgpool3d");
  if (rec) {
    auto xi = x; auto yo = y;
    g->record("avgpool3d", [xi, yo, B, C, D, H, W, Do, Ho, Wo, inv]() mutable {
      if (!yo.has_grad()) return;
      xi.ensure_grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        T* gx = xi.grad() + bc * D * H * W;
        const T* dy = yo.grad() + bc * Do * Ho * Wo;
        for (int64_t z = 0; z < Do; ++z)
          for (int64_t yy = 0; yy < Ho; ++yy)
            for (int64_t xx = 0; xx < Wo; ++xx) {
              const T gv = dy[(z * Ho + yy) * Wo + xx] * inv;
              for (int dz = 0; dz < 2; ++dz)
                for (int dy2 = 0; dy2 < 2; ++dy2)
                  for (int dx = 0; dx < 2; ++dx)
                    gx[((2 * z + dz) * H + 2 * yy + dy2) * W + 2 * xx + dx] += gv;
            }
      }
    });
  }
  return y;
}

}  // namespace voxseg

#endif  // VOXSEG_OPS_HPP
