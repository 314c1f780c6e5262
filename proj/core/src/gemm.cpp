#include "pidi/gemm.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#include "pidi/parallel.hpp"

namespace pidi {
namespace {

template <typename T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr int mr = 8;
  static constexpr int nr = 32;
};
template <>
struct Tile<double> {
  static constexpr int mr = 8;
  static constexpr int nr = 16;
};

// Packs op(A) rows [i0, i0+MR) as k-major interleaved MR-vectors, zero-filling
// rows past m.
template <typename T, int MR>
void pack_a(bool trans, const T* a, int lda, int m, int k, int i0, T* dst) {
  const int rows = std::min(MR, m - i0);
  for (int p = 0; p < k; ++p) {
    T* d = dst + static_cast<std::size_t>(p) * MR;
    for (int r = 0; r < rows; ++r) {
      const int i = i0 + r;
      d[r] = trans ? a[static_cast<std::size_t>(p) * lda + i] : a[static_cast<std::size_t>(i) * lda + p];
    }
    for (int r = rows; r < MR; ++r) d[r] = T{0};
  }
}

template <typename T, int NR>
void pack_b(bool trans, const T* b, int ldb, int n, int k, int j0, T* dst) {
  const int cols = std::min(NR, n - j0);
  for (int p = 0; p < k; ++p) {
    T* d = dst + static_cast<std::size_t>(p) * NR;
    if (!trans) {
      const T* src = b + static_cast<std::size_t>(p) * ldb + j0;
      for (int c = 0; c < cols; ++c) d[c] = src[c];
    } else {
      for (int c = 0; c < cols; ++c) d[c] = b[static_cast<std::size_t>(j0 + c) * ldb + p];
    }
    for (int c = cols; c < NR; ++c) d[c] = T{0};
  }
}

template <typename T, int MR, int NR>
void micro_kernel(int k, const T* pa, const T* pb, T* c, int ldc, int rows, int cols, bool accumulate) {
  T acc[MR][NR];
  for (int r = 0; r < MR; ++r) {
    for (int j = 0; j < NR; ++j) {
      acc[r][j] = (accumulate && r < rows && j < cols) ? c[static_cast<std::size_t>(r) * ldc + j] : T{0};
    }
  }
  for (int p = 0; p < k; ++p) {
    const T* bp = pb + static_cast<std::size_t>(p) * NR;
    const T* ap = pa + static_cast<std::size_t>(p) * MR;
    for (int r = 0; r < MR; ++r) {
      const T av = ap[r];
      for (int j = 0; j < NR; ++j) acc[r][j] += av * bp[j];
    }
  }
  for (int r = 0; r < rows; ++r) {
    T* dst = c + static_cast<std::size_t>(r) * ldc;
    for (int j = 0; j < cols; ++j) dst[j] = acc[r][j];
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda, const T* b,
          int ldb, T* c, int ldc, bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate) {
      for (int i = 0; i < m; ++i) std::fill_n(c + static_cast<std::size_t>(i) * ldc, n, T{0});
    }
    return;
  }
  constexpr int MR = Tile<T>::mr;
  constexpr int NR = Tile<T>::nr;
  const int row_blocks = (m + MR - 1) / MR;
  const int panels = (n + NR - 1) / NR;

  std::vector<T> packed_a(static_cast<std::size_t>(row_blocks) * MR * k);
  parallel_for(static_cast<std::size_t>(row_blocks), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t blk = lo; blk < hi; ++blk) {
      pack_a<T, MR>(trans_a, a, lda, m, k, static_cast<int>(blk) * MR,
                    packed_a.data() + blk * MR * static_cast<std::size_t>(k));
    }
  });

  parallel_for(static_cast<std::size_t>(panels), [&](std::size_t lo, std::size_t hi) {
    std::vector<T> packed_b(static_cast<std::size_t>(NR) * k);
    for (std::size_t panel = lo; panel < hi; ++panel) {
      const int j0 = static_cast<int>(panel) * NR;
      const int cols = std::min(NR, n - j0);
      pack_b<T, NR>(trans_b, b, ldb, n, k, j0, packed_b.data());
      for (int blk = 0; blk < row_blocks; ++blk) {
        const int i0 = blk * MR;
        micro_kernel<T, MR, NR>(k, packed_a.data() + static_cast<std::size_t>(blk) * MR * k,
                                packed_b.data(), c + static_cast<std::size_t>(i0) * ldc + j0, ldc,
                                std::min(MR, m - i0), cols, accumulate);
      }
    }
  });
}

template void gemm<float>(bool, bool, int, int, int, const float*, int, const float*, int, float*,
                          int, bool);
template void gemm<double>(bool, bool, int, int, int, const double*, int, const double*, int,
                           double*, int, bool);

}  // namespace pidi
