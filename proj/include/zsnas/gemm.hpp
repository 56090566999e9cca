#pragma once

#include <cstddef>
#include <cstring>

namespace zsnas {

// C[M x N] += A[M x K] * B[K x N], all row-major with explicit leading
// dimensions. Single-threaded on purpose: training parallelism lives at the
// architecture level and per-call determinism must hold bit-for-bit.
//
// The 4x16 micro-kernel keeps its accumulators in GNU vector registers; gcc
// and clang both compile it to broadcast+FMA without spilling, which matters
// here because the whole ground-truth benchmark budget hangs on this loop.

namespace detail {

typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d x;
  std::memcpy(&x, p, sizeof(x));
  return x;
}

inline void store4(double* p, v4d x) { std::memcpy(p, &x, sizeof(x)); }

inline void kernel_4x16(const double* __restrict__ a, const double* __restrict__ b,
                        double* __restrict__ c, int K, int lda, int ldb, int ldc) {
  v4d c00{}, c01{}, c02{}, c03{};
  v4d c10{}, c11{}, c12{}, c13{};
  v4d c20{}, c21{}, c22{}, c23{};
  v4d c30{}, c31{}, c32{}, c33{};
  for (int k = 0; k < K; ++k) {
    const double* brow = b + static_cast<std::size_t>(k) * ldb;
    const v4d b0 = load4(brow), b1 = load4(brow + 4), b2 = load4(brow + 8),
              b3 = load4(brow + 12);
    const v4d a0 = v4d{} + a[0 * static_cast<std::size_t>(lda) + k];
    const v4d a1 = v4d{} + a[1 * static_cast<std::size_t>(lda) + k];
    const v4d a2 = v4d{} + a[2 * static_cast<std::size_t>(lda) + k];
    const v4d a3 = v4d{} + a[3 * static_cast<std::size_t>(lda) + k];
    c00 += a0 * b0; c01 += a0 * b1; c02 += a0 * b2; c03 += a0 * b3;
    c10 += a1 * b0; c11 += a1 * b1; c12 += a1 * b2; c13 += a1 * b3;
    c20 += a2 * b0; c21 += a2 * b1; c22 += a2 * b2; c23 += a2 * b3;
    c30 += a3 * b0; c31 += a3 * b1; c32 += a3 * b2; c33 += a3 * b3;
  }
  const v4d acc[4][4] = {{c00, c01, c02, c03},
                         {c10, c11, c12, c13},
                         {c20, c21, c22, c23},
                         {c30, c31, c32, c33}};
  for (int i = 0; i < 4; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < 4; ++j) {
      store4(crow + 4 * j, load4(crow + 4 * j) + acc[i][j]);
    }
  }
}

inline void kernel_1x16(const double* __restrict__ a, const double* __restrict__ b,
                        double* __restrict__ c, int K, int ldb) {
  v4d c0{}, c1{}, c2{}, c3{};
  for (int k = 0; k < K; ++k) {
    const double* brow = b + static_cast<std::size_t>(k) * ldb;
    const v4d av = v4d{} + a[k];
    c0 += av * load4(brow);
    c1 += av * load4(brow + 4);
    c2 += av * load4(brow + 8);
    c3 += av * load4(brow + 12);
  }
  store4(c, load4(c) + c0);
  store4(c + 4, load4(c + 4) + c1);
  store4(c + 8, load4(c + 8) + c2);
  store4(c + 12, load4(c + 12) + c3);
}

}  // namespace detail

inline void gemm_add(const double* a, const double* b, double* c, int M, int K,
                     int N, int lda, int ldb, int ldc) {
  constexpr int MR = 4, NR = 16;
  const int nmain = N - N % NR;
  int i = 0;
  for (; i + MR <= M; i += MR) {
    const double* arow = a + static_cast<std::size_t>(i) * lda;
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < nmain; j += NR) {
      detail::kernel_4x16(arow, b + j, crow + j, K, lda, ldb, ldc);
    }
    for (int j = nmain; j < N; ++j) {
      for (int ii = 0; ii < MR; ++ii) {
        double s = 0.0;
        const double* ar = arow + static_cast<std::size_t>(ii) * lda;
        for (int k = 0; k < K; ++k) s += ar[k] * b[static_cast<std::size_t>(k) * ldb + j];
        crow[static_cast<std::size_t>(ii) * ldc + j] += s;
      }
    }
  }
  for (; i < M; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * lda;
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < nmain; j += NR) {
      detail::kernel_1x16(arow, b + j, crow + j, K, ldb);
    }
    for (int j = nmain; j < N; ++j) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += arow[k] * b[static_cast<std::size_t>(k) * ldb + j];
      crow[j] += s;
    }
  }
}

inline void gemm_add(const double* a, const double* b, double* c, int M, int K, int N) {
  gemm_add(a, b, c, M, K, N, K, N, N);
}

}  // namespace zsnas
