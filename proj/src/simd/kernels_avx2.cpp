// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only reached after the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "adan/simd/kernels.hpp"

namespace adan::simd {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
    s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), s2);
    s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), s3);
  }
  for (; i + 8 <= n; i += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
  float s = hsum(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
  for (; i < n; ++i) s = std::fma(a[i], b[i], s);
  return s;
}

float squared_distance_avx2(const float* a, const float* b, std::size_t n) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __m256 d0 = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    const __m256 d1 = _mm256_sub_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8));
    s0 = _mm256_fmadd_ps(d0, d0, s0);
    s1 = _mm256_fmadd_ps(d1, d1, s1);
  }
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    s0 = _mm256_fmadd_ps(d, d, s0);
  }
  float s = hsum(_mm256_add_ps(s0, s1));
  for (; i < n; ++i) {
    const float d = a[i] - b[i];
    s = std::fma(d, d, s);
  }
  return s;
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    _mm256_storeu_ps(y + i + 8, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8)));
  }
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// Register-blocked C[rows, j0:j0+16] update for up to four rows. Each output
// element is one fma chain over p in increasing order.
template <int Rows>
inline void nn_block16(std::size_t n, std::size_t k, const float* a, const float* b, float* c, std::size_t j0,
                       bool accumulate) {
  __m256 acc[Rows][2];
  for (int r = 0; r < Rows; ++r) {
    acc[r][0] = accumulate ? _mm256_loadu_ps(c + r * n + j0) : _mm256_setzero_ps();
    acc[r][1] = accumulate ? _mm256_loadu_ps(c + r * n + j0 + 8) : _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * n + j0);
    const __m256 b1 = _mm256_loadu_ps(b + p * n + j0 + 8);
    for (int r = 0; r < Rows; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * k + p);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < Rows; ++r) {
    _mm256_storeu_ps(c + r * n + j0, acc[r][0]);
    _mm256_storeu_ps(c + r * n + j0 + 8, acc[r][1]);
  }
}

template <int Rows>
inline void nn_block8(std::size_t n, std::size_t k, const float* a, const float* b, float* c, std::size_t j0,
                      bool accumulate) {
  __m256 acc[Rows];
  for (int r = 0; r < Rows; ++r) acc[r] = accumulate ? _mm256_loadu_ps(c + r * n + j0) : _mm256_setzero_ps();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * n + j0);
    for (int r = 0; r < Rows; ++r) acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * k + p), b0, acc[r]);
  }
  for (int r = 0; r < Rows; ++r) _mm256_storeu_ps(c + r * n + j0, acc[r]);
}

template <int Rows>
inline void nn_rows(std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) nn_block16<Rows>(n, k, a, b, c, j, accumulate);
  for (; j + 8 <= n; j += 8) nn_block8<Rows>(n, k, a, b, c, j, accumulate);
  for (; j < n; ++j) {
    for (int r = 0; r < Rows; ++r) {
      float s = accumulate ? c[r * n + j] : 0.0f;
      for (std::size_t p = 0; p < k; ++p) s = std::fma(a[r * k + p], b[p * n + j], s);
      c[r * n + j] = s;
    }
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                  bool accumulate) {
  if (n < 8) {
    // Too narrow for column vectors: one dot product per element instead.
    std::vector<float> col(k);
    for (std::size_t j = 0; j < n; ++j) {
      const float* bj = b;
      if (n != 1) {
        for (std::size_t p = 0; p < k; ++p) col[p] = b[p * n + j];
        bj = col.data();
      }
      for (std::size_t i = 0; i < m; ++i) {
        const float v = dot_avx2(a + i * k, bj, k);
        c[i * n + j] = accumulate ? c[i * n + j] + v : v;
      }
    }
    return;
  }
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) nn_rows<4>(n, k, a + i * k, b, c + i * n, accumulate);
  for (; i < m; ++i) nn_rows<1>(n, k, a + i * k, b, c + i * n, accumulate);
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                  bool accumulate) {
  if (k < 8) {
    std::vector<float> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn_avx2(m, n, k, a, bt.data(), c, accumulate);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const float v = dot_avx2(a + i * k, b + j * k, k);
      c[i * n + j] = accumulate ? c[i * n + j] + v : v;
    }
  }
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                  bool accumulate) {
  if (n < 8) {
    std::vector<float> tmp(m);
    for (std::size_t j = 0; j < n; ++j) {
      std::fill(tmp.begin(), tmp.end(), 0.0f);
      for (std::size_t p = 0; p < k; ++p) axpy_avx2(b[p * n + j], a + p * m, tmp.data(), m);
      for (std::size_t i = 0; i < m; ++i) c[i * n + j] = accumulate ? c[i * n + j] + tmp[i] : tmp[i];
    }
    return;
  }
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) axpy_avx2(a[p * m + i], b + p * n, c + i * n, n);
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{
      Isa::Avx2, &dot_avx2, &squared_distance_avx2, &axpy_avx2, &gemm_nn_avx2, &gemm_nt_avx2, &gemm_tn_avx2,
  };
  return &table;
}

}  // namespace adan::simd
