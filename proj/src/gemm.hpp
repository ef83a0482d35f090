#pragma once

// Internal dense matrix kernel used by the convolution layers.

namespace lsseg::detail {

/// C (M x N) = A (M x K) * B (K x N), or C += A * B when `accumulate`.
/// Row-major with leading dimensions lda/ldb/ldc. Every C element sums its k
/// terms in ascending order, independent of the thread count.
template <class T>
void gemm(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
          bool accumulate);

}  // namespace lsseg::detail
