#pragma once

#include <cstddef>
#include <cstring>
#include <vector>

// Row-major accumulate-into kernels. Every output element is accumulated
// sequentially over k starting from its current value, so results do not
// depend on the blocking below.
namespace metalens::numerics::detail {

typedef double v4d __attribute__((vector_size(32)));

inline double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

// C += A * B with A(i,k) = A[i*sai + k*sak], B(k,j) = B[k*ldb + j] and
// C(i,j) = C[i*ldc + j]. Column panels of B are the outer loop so each panel
// stays in L1 across all rows of A.
inline void gemm_general(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t sai,
                         std::size_t sak, const double* B, std::size_t ldb, double* C, std::size_t ldc) {
  constexpr std::size_t MR = 4, NR = 8;
  std::size_t j = 0;
  for (; j + NR <= N; j += NR) {
    std::size_t i = 0;
    for (; i + MR <= M; i += MR) {
      // Explicit vector accumulators: with runtime extents the compiler
      // otherwise spills a plain array to memory.
      v4d acc[MR][2];
      for (std::size_t r = 0; r < MR; ++r) {
        std::memcpy(&acc[r][0], C + (i + r) * ldc + j, sizeof(v4d));
        std::memcpy(&acc[r][1], C + (i + r) * ldc + j + 4, sizeof(v4d));
      }
      const double* a0 = A + i * sai;
      for (std::size_t k = 0; k < K; ++k) {
        v4d b0, b1;
        std::memcpy(&b0, B + k * ldb + j, sizeof(v4d));
        std::memcpy(&b1, B + k * ldb + j + 4, sizeof(v4d));
        const double* ak = a0 + k * sak;
        for (std::size_t r = 0; r < MR; ++r) {
          const double av = ak[r * sai];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < MR; ++r) {
        std::memcpy(C + (i + r) * ldc + j, &acc[r][0], sizeof(v4d));
        std::memcpy(C + (i + r) * ldc + j + 4, &acc[r][1], sizeof(v4d));
      }
    }
    for (; i < M; ++i) {
      v4d acc0, acc1;
      std::memcpy(&acc0, C + i * ldc + j, sizeof(v4d));
      std::memcpy(&acc1, C + i * ldc + j + 4, sizeof(v4d));
      for (std::size_t k = 0; k < K; ++k) {
        v4d b0, b1;
        std::memcpy(&b0, B + k * ldb + j, sizeof(v4d));
        std::memcpy(&b1, B + k * ldb + j + 4, sizeof(v4d));
        const double av = A[i * sai + k * sak];
        acc0 += av * b0;
        acc1 += av * b1;
      }
      std::memcpy(C + i * ldc + j, &acc0, sizeof(v4d));
      std::memcpy(C + i * ldc + j + 4, &acc1, sizeof(v4d));
    }
  }
  if (j == N) return;
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * ldc;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A[i * sai + k * sak];
      const double* b = B + k * ldb;
      for (std::size_t jj = j; jj < N; ++jj) c[jj] += av * b[jj];
    }
  }
}

inline void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t sai,
                         std::size_t sak, const double* B, double* C) {
  gemm_general(M, N, K, A, sai, sak, B, N, C, N);
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, K, 1, B, C);
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, 1, M, B, C);
}

// C[M,N] += A[M,K] * B[N,K]^T, via a transposed copy of B.
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  thread_local std::vector<double> bt;
  bt.resize(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_strided(M, N, K, A, K, 1, bt.data(), C);
}

}  // namespace metalens::numerics::detail
