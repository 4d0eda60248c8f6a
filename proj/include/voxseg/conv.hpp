#ifndef VOXSEG_CONV_HPP
#define VOXSEG_CONV_HPP

#include <algorithm>
#include <cstring>
#include <vector>

#include "voxseg/gemm.hpp"
#include "voxseg/graph.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

namespace detail {

inline int64_t conv_out_extent(int64_t in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

// Unpacks one slab of output rows [z0, z1) into column-major patches:
// col[(ci*k^3 + kidx), n] with n indexing output voxels of the slab.
// Row-major [K, n_slab], zero-padded at the borders.
template <typename T>
void im2col_slab(const T* x, int64_t cin, int64_t D, int64_t H, int64_t W,
                 int k, int stride, int padding, int64_t Ho, int64_t Wo,
                 int64_t z0, int64_t z1, T* col) {
  const int64_t n_slab = (z1 - z0) * Ho * Wo;
  int64_t row = 0;
  for (int64_t ci = 0; ci < cin; ++ci) {
    const T* xc = x + ci * D * H * W;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = col + row * n_slab;
          for (int64_t zo = z0; zo < z1; ++zo) {
            const int64_t iz = zo * stride + kz - padding;
            for (int64_t yo = 0; yo < Ho; ++yo, dst += Wo) {
              const int64_t iy = yo * stride + ky - padding;
              if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                std::fill(dst, dst + Wo, T(0));
                continue;
              }
              const T* src = xc + (iz * H + iy) * W;
              if (stride == 1) {
                const int64_t shift = kx - padding;  // ix = xo + shift
                const int64_t lo = std::max<int64_t>(0, -shift);
                const int64_t hi = std::min<int64_t>(Wo, W - shift);
                if (lo > 0) std::fill(dst, dst + lo, T(0));
                if (hi > lo) std::memcpy(dst + lo, src + lo + shift, sizeof(T) * static_cast<size_t>(hi - lo));
                if (hi < Wo) std::fill(dst + std::max(hi, lo), dst + Wo, T(0));
              } else {
                for (int64_t xo = 0; xo < Wo; ++xo) {
                  const int64_t ix = xo * stride + kx - padding;
                  dst[xo] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                }
              }
            }
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col_slab, used for the input gradient. Runs
// sequentially so overlapping contributions accumulate in a fixed order.
template <typename T>
void col2im_add_slab(const T* col, int64_t cin, int64_t D, int64_t H, int64_t W,
                     int k, int stride, int padding, int64_t Ho, int64_t Wo,
                     int64_t z0, int64_t z1, T* gx) {
  const int64_t n_slab = (z1 - z0) * Ho * Wo;
  int64_t row = 0;
  for (int64_t ci = 0; ci < cin; ++ci) {
    T* gc = gx + ci * D * H * W;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* src = col + row * n_slab;
          for (int64_t zo = z0; zo < z1; ++zo) {
            const int64_t iz = zo * stride + kz - padding;
            for (int64_t yo = 0; yo < Ho; ++yo, src += Wo) {
              const int64_t iy = yo * stride + ky - padding;
              if (iz < 0 || iz >= D || iy < 0 || iy >= H) continue;
              T* dstrow = gc + (iz * H + iy) * W;
              for (int64_t xo = 0; xo < Wo; ++xo) {
                const int64_t ix = xo * stride + kx - padding;
                if (ix >= 0 && ix < W) dstrow[ix + 0] += src[xo];
              }
            }
          }
        }
      }
    }
  }
}

// Slab thickness keeping the unpacked patch buffer around 16 MB.
inline int64_t conv_slab_rows(int64_t K, int64_t Ho, int64_t Wo, int64_t Do, size_t elem) {
  const int64_t budget = 16 * 1024 * 1024;
  int64_t t = budget / std::max<int64_t>(1, K * Ho * Wo * static_cast<int64_t>(elem));
  return std::clamp<int64_t>(t, 1, Do);
}

}  // namespace detail

// 3D cross-correlation (the deep-learning convention; the kernel is not
// flipped). x: [B,Cin,D,H,W], w: [Cout,Cin,k,k,k], bias: [Cout].
// Supported: k in {1,3}, stride in {1,2}, padding == (k-1)/2, so stride 1
// preserves the spatial extents.
template <typename T>
Tensor<T> conv3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias, int stride, int padding) {
  if (x.ndim() != 5) throw ShapeError("conv3d: input must be [B,C,D,H,W], got " + shape_str(x.shape()));
  if (w.ndim() != 5) throw ShapeError("conv3d: weight must be [Cout,Cin,k,k,k], got " + shape_str(w.shape()));
  const int64_t B = x.dim(0), Cin = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t Cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  if (w.dim(3) != k || w.dim(4) != k) throw ShapeError("conv3d: kernel must be cubic, got " + shape_str(w.shape()));
  if (k != 1 && k != 3) throw ShapeError(format_msg("conv3d: kernel size must be 1 or 3, got ", k));
  if (stride != 1 && stride != 2) throw ShapeError(format_msg("conv3d: stride must be 1 or 2, got ", stride));
  if (padding != (k - 1) / 2) throw ShapeError(format_msg("conv3d: padding must be (k-1)/2 = ", (k - 1) / 2, ", got ", padding));
  if (w.dim(1) != Cin)
    throw ShapeError(format_msg("conv3d: input channels ", Cin, " do not match weight Cin ", w.dim(1)));
  if (!bias.valid() || bias.ndim() != 1 || bias.dim(0) != Cout)
    throw ShapeError("conv3d: bias must be [Cout]");

  const int64_t Do = detail::conv_out_extent(D, k, stride, padding);
  const int64_t Ho = detail::conv_out_extent(H, k, stride, padding);
  const int64_t Wo = detail::conv_out_extent(W, k, stride, padding);
  if (Do < 1 || Ho < 1 || Wo < 1)
    throw ShapeError("conv3d: output would be empty for input " + shape_str(x.shape()));

  const int64_t K = Cin * k * k * k;
  const int64_t sp_in = D * H * W;
  const int64_t sp_out = Do * Ho * Wo;
  const bool rec = g && (x.requires_grad() || w.requires_grad() || bias.requires_grad());

  Tensor<T> y(Shape{B, Cout, Do, Ho, Wo}, rec);
  const int64_t slab = detail::conv_slab_rows(K, Ho, Wo, Do, sizeof(T));
  std::vector<T> col(static_cast<size_t>(K * slab * Ho * Wo));

  for (int64_t b = 0; b < B; ++b) {
    const T* xb = x.data() + b * Cin * sp_in;
    T* yb = y.data() + b * Cout * sp_out;
    for (int64_t z0 = 0; z0 < Do; z0 += slab) {
      const int64_t z1 = std::min(Do, z0 + slab);
      const int64_t n = (z1 - z0) * Ho * Wo;
      detail::im2col_slab(xb, Cin, D, H, W, k, stride, padding, Ho, Wo, z0, z1, col.data());
      detail::gemm(false, false, Cout, n, K, T(1), w.data(), K, col.data(), n,
                   T(0), yb + z0 * Ho * Wo, sp_out);
    }
    for (int64_t co = 0; co < Cout; ++co) {
      T* yc = yb + co * sp_out;
      const T bv = bias.data()[co];
      for (int64_t i = 0; i < sp_out; ++i) yc[i] += bv;
    }
  }
  check_finite(y, "conv3d");

  if (rec) {
    auto xi = x; auto wi = w; auto bi = bias; auto yo = y;
    g->record("conv3d", [xi, wi, bi, yo, B, Cin, Cout, D, H, W, Do, Ho, Wo, k, stride, padding, K, sp_in, sp_out]() mutable {
      if (!yo.has_grad()) return;
      const T* dy = yo.grad();
      const int64_t slab = detail::conv_slab_rows(K, Ho, Wo, Do, sizeof(T));
      std::vector<T> buf(static_cast<size_t>(K * slab * Ho * Wo));
      if (xi.requires_grad()) {
        xi.ensure_grad();
        for (int64_t b = 0; b < B; ++b) {
          T* gx = xi.grad() + b * Cin * sp_in;
          const T* dyb = dy + b * Cout * sp_out;
          for (int64_t z0 = 0; z0 < Do; z0 += slab) {
            const int64_t z1 = std::min(Do, z0 + slab);
            const int64_t n = (z1 - z0) * Ho * Wo;
            detail::gemm(true, false, K, n, Cout, T(1), wi.data(), K,
                         dyb + z0 * Ho * Wo, sp_out, T(0), buf.data(), n);
            detail::col2im_add_slab(buf.data(), Cin, D, H, W, k, stride, padding, Ho, Wo, z0, z1, gx);
          }
        }
      }
      if (wi.requires_grad()) {
        wi.ensure_grad();
        for (int64_t b = 0; b < B; ++b) {
          const T* xb = xi.data() + b * Cin * sp_in;
          const T* dyb = dy + b * Cout * sp_out;
          for (int64_t z0 = 0; z0 < Do; z0 += slab) {
            const int64_t z1 = std::min(Do, z0 + slab);
            const int64_t n = (z1 - z0) * Ho * Wo;
            detail::im2col_slab(xb, Cin, D, H, W, k, stride, padding, Ho, Wo, z0, z1, buf.data());
            detail::gemm(false, true, Cout, K, n, T(1), dyb + z0 * Ho * Wo, sp_out,
                         buf.data(), n, T(1), wi.grad(), K);
          }
        }
      }
      if (bi.requires_grad()) {
        bi.ensure_grad();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t co = 0; co < Cout; ++co) {
            const T* dyc = dy + (b * Cout + co) * sp_out;
            T acc = T(0);
            for (int64_t i = 0; i < sp_out; ++i) acc += dyc[i];
            bi.grad()[co] += acc;
          }
        }
      }
    });
  }
  return y;
}

// Transposed convolution with a 2x2x2 kernel and stride 2: exact doubling
// of every spatial extent, each output voxel receiving exactly one kernel
// contribution. x: [B,Cin,D,H,W], w: [Cin,Cout,2,2,2].
template <typename T>
Tensor<T> transposed_conv3d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w, int stride = 2) {
  if (x.ndim() != 5) throw ShapeError("transposed_conv3d: input must be [B,C,D,H,W]");
  if (w.ndim() != 5 || w.dim(2) != 2 || w.dim(3) != 2 || w.dim(4) != 2)
    throw ShapeError("transposed_conv3d: weight must be [Cin,Cout,2,2,2], got " + shape_str(w.shape()));
  if (stride != 2) throw ShapeError("transposed_conv3d: stride must be 2");
  const int64_t B = x.dim(0), Cin = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (w.dim(0) != Cin)
    throw ShapeError(format_msg("transposed_conv3d: input channels ", Cin, " do not match weight Cin ", w.dim(0)));
  const int64_t Cout = w.dim(1);
  const int64_t N = D * H * W;
  const int64_t M2 = Cout * 8;
  const bool rec = g && (x.requires_grad() || w.requires_grad());

  Tensor<T> y(Shape{B, Cout, 2 * D, 2 * H, 2 * W}, rec);
  const int64_t sp_out = 8 * N;
  std::vector<T> t(static_cast<size_t>(M2 * N));

  auto scatter = [&](const T* src, T* yb) {
    // src row r = co*8 + (dz*2+dy)*2 + dx; column n = (z*H+y)*W + x
    for (int64_t co = 0; co < Cout; ++co) {
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const T* row = src + (co * 8 + (dz * 2 + dy) * 2 + dx) * N;
            T* yc = yb + co * sp_out;
            for (int64_t z = 0; z < D; ++z)
              for (int64_t yy = 0; yy < H; ++yy) {
                const T* s = row + (z * H + yy) * W;
                T* d = yc + ((2 * z + dz) * 2 * H + (2 * yy + dy)) * 2 * W + dx;
                for (int64_t xx = 0; xx < W; ++xx) d[2 * xx] = s[xx];
              }
          }
    }
  };

  for (int64_t b = 0; b < B; ++b) {
    detail::gemm(true, false, M2, N, Cin, T(1), w.data(), M2,
                 x.data() + b * Cin * N, N, T(0), t.data(), N);
    scatter(t.data(), y.data() + b * Cout * sp_out);
  }
  check_finite(y, "transposed_conv3d");

  if (rec) {
    auto xi = x; auto wi = w; auto yo = y;
    g->record("transposed_conv3d", [xi, wi, yo, B, Cin, Cout, D, H, W, N, M2, sp_out]() mutable {
      if (!yo.has_grad()) return;
      std::vector<T> dt(static_cast<size_t>(M2 * N));
      auto gather = [&](const T* dyb) {
        for (int64_t co = 0; co < Cout; ++co) {
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                T* row = dt.data() + (co * 8 + (dz * 2 + dy) * 2 + dx) * N;
                const T* dyc = dyb + co * sp_out;
                for (int64_t z = 0; z < D; ++z)
                  for (int64_t yy = 0; yy < H; ++yy) {
                    T* d = row + (z * H + yy) * W;
                    const T* s = dyc + ((2 * z + dz) * 2 * H + (2 * yy + dy)) * 2 * W + dx;
                    for (int64_t xx = 0; xx < W; ++xx) d[xx] = s[2 * xx];
                  }
              }
        }
      };
      for (int64_t b = 0; b < B; ++b) {
        gather(yo.grad() + b * Cout * sp_out);
        if (xi.requires_grad()) {
          xi.ensure_grad();
          // dX = W * dT, accumulated via a staging buffer
          std::vector<T> dx(static_cast<size_t>(Cin * N));
          detail::gemm(false, false, Cin, N, M2, T(1), wi.data(), M2, dt.data(), N, T(0), dx.data(), N);
          T* gx = xi.grad() + b * Cin * N;
          for (int64_t i = 0; i < Cin * N; ++i) gx[i] += dx[i];
        }
        if (wi.requires_grad()) {
          wi.ensure_grad();
          detail::gemm(false, true, Cin, M2, N, T(1), xi.data() + b * Cin * N, N,
                       dt.data(), N, T(1), wi.grad(), M2);
        }
      }
    });
  }
  return y;
}

}  // namespace voxseg

#endif  // VOXSEG_CONV_HPP
