#pragma once

#include <cstdint>
#include <vector>

namespace vqmae {

// C[m,n] (+)= A[m,k] * B[k,n], row-major. The i-k-j order keeps the inner
// loop a contiguous axpy over rows of B and C, which the compiler vectorizes
// without reassociation flags.
inline void gemm_nn(const double* a, const double* b, double* c,
                    std::int64_t m, std::int64_t k, std::int64_t n,
                    bool accumulate) {
  if (!accumulate)
    for (std::int64_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::int64_t j = 0; j < n; ++j)
        crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const double ap = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
    }
  }
}

inline void transpose_into(const double* a, double* at, std::int64_t m, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) at[j * m + i] = a[i * n + j];
}

namespace detail {
inline std::vector<double>& gemm_scratch(int slot) {
  static thread_local std::vector<double> buf[2];
  return buf[slot];
}
}  // namespace detail

// C (+)= A * B^T, A[m,k], B[n,k]
inline void gemm_nt(const double* a, const double* b, double* c,
                    std::int64_t m, std::int64_t k, std::int64_t n,
                    bool accumulate) {
  auto& bt = detail::gemm_scratch(0);
  bt.resize(static_cast<size_t>(k * n));
  transpose_into(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

// C (+)= A^T * B, A[k,m], B[k,n]
inline void gemm_tn(const double* a, const double* b, double* c,
                    std::int64_t m, std::int64_t k, std::int64_t n,
                    bool accumulate) {
  auto& at = detail::gemm_scratch(1);
  at.resize(static_cast<size_t>(k * m));
  transpose_into(a, at.data(), k, m);
  gemm_nn(at.data(), b, c, m, k, n, accumulate);
}

}  // namespace vqmae
