#ifndef VOXSEG_GEMM_HPP
#define VOXSEG_GEMM_HPP

#include <cstdint>

#ifdef VOXSEG_USE_CBLAS
#include <cblas.h>
#endif

namespace voxseg {
namespace detail {

// Row-major GEMM: C[M,N] = alpha * op(A) * op(B) + beta * C.
// op(A) is M x K, op(B) is K x N. Leading dimensions refer to the stored
// (untransposed) matrices. Backed by OpenBLAS when VOXSEG_USE_CBLAS is
// defined; the built-in kernel below is the portable fallback.

#ifndef VOXSEG_USE_CBLAS
template <typename T>
void gemm_fallback(bool trans_a, bool trans_b, int64_t M, int64_t N, int64_t K,
                   T alpha, const T* A, int64_t lda, const T* B, int64_t ldb,
                   T beta, T* C, int64_t ldc) {
  auto a_at = [&](int64_t i, int64_t k) { return trans_a ? A[k * lda + i] : A[i * lda + k]; };
  for (int64_t i = 0; i < M; ++i) {
    T* crow = C + i * ldc;
    if (beta == T(0)) {
      for (int64_t j = 0; j < N; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int64_t j = 0; j < N; ++j) crow[j] *= beta;
    }
    // saxpy over rows of op(B) keeps the inner loop contiguous for the
    // common NN / TN cases.
    if (!trans_b) {
      for (int64_t k = 0; k < K; ++k) {
        const T a = alpha * a_at(i, k);
        if (a == T(0)) continue;
        const T* brow = B + k * ldb;
        for (int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
      }
    } else {
      for (int64_t j = 0; j < N; ++j) {
        const T* bcol = B + j * ldb;
        T acc = T(0);
        for (int64_t k = 0; k < K; ++k) acc += a_at(i, k) * bcol[k];
        crow[j] += alpha * acc;
      }
    }
  }
}
#endif

inline void gemm(bool trans_a, bool trans_b, int64_t M, int64_t N, int64_t K,
                 float alpha, const float* A, int64_t lda, const float* B,
                 int64_t ldb, float beta, float* C, int64_t ldc) {
#ifdef VOXSEG_USE_CBLAS
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(M),
              static_cast<int>(N), static_cast<int>(K), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C,
              static_cast<int>(ldc));
#else
  gemm_fallback(trans_a, trans_b, M, N, K, alpha, A, lda, B, ldb, beta, C, ldc);
#endif
}

inline void gemm(bool trans_a, bool trans_b, int64_t M, int64_t N, int64_t K,
                 double alpha, const double* A, int64_t lda, const double* B,
                 int64_t ldb, double beta, double* C, int64_t ldc) {
#ifdef VOXSEG_USE_CBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(M),
              static_cast<int>(N), static_cast<int>(K), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C,
              static_cast<int>(ldc));
#else
  gemm_fallback(trans_a, trans_b, M, N, K, alpha, A, lda, B, ldb, beta, C, ldc);
#endif
}

inline void set_gemm_threads(int n) {
#ifdef VOXSEG_USE_CBLAS
  openblas_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace detail
}  // namespace voxseg

#endif  // VOXSEG_GEMM_HPP
