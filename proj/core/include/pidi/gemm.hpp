#pragma once

namespace pidi {

/// C = op(A)·op(B) (+ C when accumulate), all row-major.
///
/// op(A) is m×k, op(B) is k×n. Each output element is accumulated
/// sequentially over k in increasing order, so results do not depend on
/// blocking or thread count.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda, const T* b,
          int ldb, T* c, int ldc, bool accumulate);

}  // namespace pidi
