#pragma once

#include <cstddef>

namespace saf {

enum class Transpose { No, Yes };

/// C (M x N) = op(A) * op(B) [+ C when accumulate].
/// op(A) is M x K: A is stored M x K row-major, or K x M when transposed.
/// op(B) is K x N: B is stored K x N row-major, or N x K when transposed.
///
/// Work is split across OpenMP threads by output tile; every output element is
/// reduced over K in index order by a single thread, so results do not depend
/// on the thread count.
template <class T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate = false);

}  // namespace saf
