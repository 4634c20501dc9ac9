#include "saf/gemm.hpp"

#include <algorithm>
#include <vector>

namespace saf {
namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 64;

// Full 4 x 64 tile; fixed trip counts let the compiler keep the accumulators in vector registers.
template <class T>
void full_tile(std::size_t k, std::size_t n, const T* a, std::size_t lda, const T* b, T* c,
               bool accumulate) {
  T acc[kRowBlock][kColBlock];
  for (std::size_t r = 0; r < kRowBlock; ++r)
    for (std::size_t j = 0; j < kColBlock; ++j) acc[r][j] = accumulate ? c[r * n + j] : T{0};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    const T a0 = a[0 * lda + p];
    const T a1 = a[1 * lda + p];
    const T a2 = a[2 * lda + p];
    const T a3 = a[3 * lda + p];
#pragma omp simd
    for (std::size_t j = 0; j < kColBlock; ++j) {
      const T bv = brow[j];
      acc[0][j] += a0 * bv;
      acc[1][j] += a1 * bv;
      acc[2][j] += a2 * bv;
      acc[3][j] += a3 * bv;
    }
  }
  for (std::size_t r = 0; r < kRowBlock; ++r)
    for (std::size_t j = 0; j < kColBlock; ++j) c[r * n + j] = acc[r][j];
}

template <class T>
void edge_tile(std::size_t rows, std::size_t cols, std::size_t k, std::size_t n, const T* a,
               std::size_t lda, const T* b, T* c, bool accumulate) {
  T acc[kRowBlock][kColBlock];
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) acc[r][j] = accumulate ? c[r * n + j] : T{0};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t r = 0; r < rows; ++r) {
      const T av = a[r * lda + p];
      for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) c[r * n + j] = acc[r][j];
}

template <class T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

}  // namespace

template <class T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  std::vector<T> a_packed, b_packed;
  if (trans_a == Transpose::Yes) {
    a_packed = transposed(a, k, m);
    a = a_packed.data();
  }
  if (trans_b == Transpose::Yes) {
    b_packed = transposed(b, n, k);
    b = b_packed.data();
  }

  const std::size_t row_tiles = (m + kRowBlock - 1) / kRowBlock;
  const std::size_t col_tiles = (n + kColBlock - 1) / kColBlock;
  const std::ptrdiff_t tiles = static_cast<std::ptrdiff_t>(row_tiles * col_tiles);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tiles; ++t) {
    // Row tiles vary fastest so consecutive tiles reuse the same panel of B.
    const std::size_t rt = static_cast<std::size_t>(t) % row_tiles;
    const std::size_t ct = static_cast<std::size_t>(t) / row_tiles;
    const std::size_t i0 = rt * kRowBlock;
    const std::size_t j0 = ct * kColBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    const std::size_t cols = std::min(kColBlock, n - j0);
    const T* a_tile = a + i0 * k;
    const T* b_tile = b + j0;
    T* c_tile = c + i0 * n + j0;
    if (rows == kRowBlock && cols == kColBlock)
      full_tile(k, n, a_tile, k, b_tile, c_tile, accumulate);
    else
      edge_tile(rows, cols, k, n, a_tile, k, b_tile, c_tile, accumulate);
  }
}

template void gemm<float>(Transpose, Transpose, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(Transpose, Transpose, std::size_t, std::size_t, std::size_t,
                           const double*, const double*, double*, bool);

}  // namespace saf
