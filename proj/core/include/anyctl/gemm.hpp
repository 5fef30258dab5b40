#pragma once

#include <cstdint>
#include <mutex>

#include "anyctl/parallel.hpp"

#if defined(ANYCTL_USE_BLAS)
#include <cblas.h>
#endif

namespace anyctl::detail {

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
// op(A) is [m,k] (stored [m,k], or [k,m] when ta), op(B) is [k,n].
// Work is split across workers by blocks of C rows; every element of C is
// produced by exactly one worker with a content-independent accumulation
// order, so outputs do not depend on the worker count... beyond the fixed
// chunk layout, which depends only on (m, worker cap).

#if defined(ANYCTL_USE_BLAS)

inline void blas_single_thread() {
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

inline void gemm_block(bool ta, bool tb, int m, int n, int k, float alpha,
                       const float* a, int lda, const float* b, int ldb,
                       float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

inline void gemm_block(bool ta, bool tb, int m, int n, int k, double alpha,
                       const double* a, int lda, const double* b, int ldb,
                       double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

#else

template <class T>
void gemm_block(bool ta, bool tb, int m, int n, int k, T alpha, const T* a,
                int lda, const T* b, int ldb, T beta, T* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<int64_t>(i) * ldc;
        for (int j = 0; j < n; ++j) crow[j] *= beta;
        for (int p = 0; p < k; ++p) {
            const T av = ta ? a[static_cast<int64_t>(p) * lda + i]
                            : a[static_cast<int64_t>(i) * lda + p];
            const T s = alpha * av;
            if (s == T(0)) continue;
            const T* brow = tb ? nullptr : b + static_cast<int64_t>(p) * ldb;
            if (!tb) {
                for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
            } else {
                for (int j = 0; j < n; ++j)
                    crow[j] += s * b[static_cast<int64_t>(j) * ldb + p];
            }
        }
    }
}

#endif

template <class T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a,
          const T* b, T beta, T* c) {
    const int lda = ta ? m : k;
    const int ldb = tb ? k : n;
    const int ldc = n;
#if defined(ANYCTL_USE_BLAS)
    blas_single_thread();
#endif
    const int64_t work = static_cast<int64_t>(m) * n * k;
    if (thread_count() == 1 || work < (1 << 18) || m < 2) {
        gemm_block(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
    parallel_for(m, [&](int64_t lo, int64_t hi) {
        const int rows = static_cast<int>(hi - lo);
        // Row block of C corresponds to a row (or column, when ta) block of A.
        const T* ablock = ta ? a + lo : a + lo * lda;
        gemm_block(ta, tb, rows, n, k, alpha, ablock, lda, b, ldb, beta,
                   c + lo * ldc, ldc);
    });
}

}  // namespace anyctl::detail
