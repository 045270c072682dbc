#pragma once

#include <cblas.h>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace nlmda::detail {

// row-major C[m,n] = alpha * op(A) * op(B) + beta * C
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, double alpha, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double beta, double* c,
                 std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

inline void debug_check_finite(const double* p, std::size_t n, const char* op) {
#ifndef NDEBUG
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw std::runtime_error(std::string(op) +
                               ": non-finite value in forward output");
    }
  }
#else
  (void)p;
  (void)n;
  (void)op;
#endif
}

}  // namespace nlmda::detail
