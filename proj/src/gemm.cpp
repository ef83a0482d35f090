#include "gemm.hpp"

#include <algorithm>
#include <cstddef>

#include "lsseg/parallel.hpp"

namespace lsseg::detail {

namespace {

constexpr int kRowTile = 4;
constexpr int kBlockN = 256;
constexpr int kBlockK = 256;

template <class T>
constexpr int col_tile() {
    return 64 / static_cast<int>(sizeof(T)) * 2;  // two cache lines of B per k
}

// C[0:4, 0:NR] += A[0:4, 0:kc] * B[0:kc, 0:NR]
template <class T, int NR>
inline void micro_tile(int kc, const T* __restrict A, int lda, const T* __restrict B, int ldb,
                       T* __restrict C, int ldc) {
    T acc[kRowTile][NR];
    for (int r = 0; r < kRowTile; ++r)
        for (int j = 0; j < NR; ++j) acc[r][j] = C[static_cast<std::ptrdiff_t>(r) * ldc + j];
    for (int k = 0; k < kc; ++k) {
        const T* b = B + static_cast<std::ptrdiff_t>(k) * ldb;
        const T a0 = A[k];
        const T a1 = A[lda + k];
        const T a2 = A[2 * static_cast<std::ptrdiff_t>(lda) + k];
        const T a3 = A[3 * static_cast<std::ptrdiff_t>(lda) + k];
        for (int j = 0; j < NR; ++j) {
            acc[0][j] += a0 * b[j];
            acc[1][j] += a1 * b[j];
            acc[2][j] += a2 * b[j];
            acc[3][j] += a3 * b[j];
        }
    }
    for (int r = 0; r < kRowTile; ++r)
        for (int j = 0; j < NR; ++j) C[static_cast<std::ptrdiff_t>(r) * ldc + j] = acc[r][j];
}

// Generic edge path: rows [i0, i1), cols [j0, j1), k in [k0, k1).
template <class T>
inline void edge_block(int i0, int i1, int j0, int j1, int k0, int k1, const T* A, int lda,
                       const T* B, int ldb, T* C, int ldc) {
    for (int i = i0; i < i1; ++i) {
        T* c = C + static_cast<std::ptrdiff_t>(i) * ldc;
        const T* a = A + static_cast<std::ptrdiff_t>(i) * lda;
        for (int k = k0; k < k1; ++k) {
            const T av = a[k];
            const T* b = B + static_cast<std::ptrdiff_t>(k) * ldb;
            for (int j = j0; j < j1; ++j) c[j] += av * b[j];
        }
    }
}

template <class T>
void column_block(int jb, int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C,
                  int ldc, bool accumulate) {
    constexpr int NR = col_tile<T>();
    const int j0 = jb * kBlockN;
    const int j1 = std::min(N, j0 + kBlockN);
    if (!accumulate)
        for (int i = 0; i < M; ++i)
            std::fill(C + static_cast<std::ptrdiff_t>(i) * ldc + j0,
                      C + static_cast<std::ptrdiff_t>(i) * ldc + j1, T(0));
    const int jfull = j0 + (j1 - j0) / NR * NR;
    const int ifull = M / kRowTile * kRowTile;
    for (int k0 = 0; k0 < K; k0 += kBlockK) {
        const int k1 = std::min(K, k0 + kBlockK);
        const int kc = k1 - k0;
        for (int i = 0; i < ifull; i += kRowTile) {
            for (int j = j0; j < jfull; j += NR) {
                micro_tile<T, NR>(kc, A + static_cast<std::ptrdiff_t>(i) * lda + k0, lda,
                                  B + static_cast<std::ptrdiff_t>(k0) * ldb + j, ldb,
                                  C + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc);
            }
            if (jfull < j1) edge_block(i, i + kRowTile, jfull, j1, k0, k1, A, lda, B, ldb, C, ldc);
        }
        if (ifull < M) edge_block(ifull, M, j0, j1, k0, k1, A, lda, B, ldb, C, ldc);
    }
}

}  // namespace

template <class T>
void gemm(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
          bool accumulate) {
    if (M <= 0 || N <= 0) return;
    if (K <= 0) {
        if (!accumulate)
            for (int i = 0; i < M; ++i)
                std::fill(C + static_cast<std::ptrdiff_t>(i) * ldc,
                          C + static_cast<std::ptrdiff_t>(i) * ldc + N, T(0));
        return;
    }
    const int nblocks = (N + kBlockN - 1) / kBlockN;
#ifdef LSSEG_HAVE_OPENMP
    const bool par = nblocks > 1 && num_threads() > 1 &&
                     static_cast<long long>(M) * N * K > (1LL << 18);
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int jb = 0; jb < nblocks; ++jb)
        column_block(jb, M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template void gemm<float>(int, int, int, const float*, int, const float*, int, float*, int, bool);
template void gemm<double>(int, int, int, const double*, int, const double*, int, double*, int,
                           bool);

}  // namespace lsseg::detail
