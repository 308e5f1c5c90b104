#include <immintrin.h>

#include "avx2_kernels.hpp"

namespace dhvt::kernels::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t kWidth = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V splat(T x) { return _mm256_set1_ps(x); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t kWidth = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V splat(T x) { return _mm256_set1_pd(x); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

template <typename S>
typename S::T dot(std::size_t n, const typename S::T* x, const typename S::T* y) {
  constexpr std::size_t w = S::kWidth;
  typename S::V acc0 = S::zero();
  typename S::V acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    acc0 = S::fmadd(S::load(x + i), S::load(y + i), acc0);
    acc1 = S::fmadd(S::load(x + i + w), S::load(y + i + w), acc1);
  }
  for (; i + w <= n; i += w) acc0 = S::fmadd(S::load(x + i), S::load(y + i), acc0);
  typename S::T acc = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename S>
void axpy(std::size_t n, typename S::T a, const typename S::T* x, typename S::T* y) {
  constexpr std::size_t w = S::kWidth;
  const typename S::V av = S::splat(a);
  std::size_t i = 0;
  for (; i + w <= n; i += w) S::store(y + i, S::fmadd(av, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

// Register tile: R rows x 2 vectors of columns. Accumulates over the full k
// range before touching C.
template <typename S, std::size_t R>
void tile(std::size_t n, std::size_t k, const typename S::T* a, const typename S::T* b,
          typename S::T* c, std::size_t j) {
  constexpr std::size_t w = S::kWidth;
  typename S::V acc[R][2];
  for (std::size_t r = 0; r < R; ++r) acc[r][0] = acc[r][1] = S::zero();
  for (std::size_t p = 0; p < k; ++p) {
    const typename S::V b0 = S::load(b + p * n + j);
    const typename S::V b1 = S::load(b + p * n + j + w);
    for (std::size_t r = 0; r < R; ++r) {
      const typename S::V av = S::splat(a[r * k + p]);
      acc[r][0] = S::fmadd(av, b0, acc[r][0]);
      acc[r][1] = S::fmadd(av, b1, acc[r][1]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    typename S::T* crow = c + r * n + j;
    S::store(crow, S::add(S::load(crow), acc[r][0]));
    S::store(crow + w, S::add(S::load(crow + w), acc[r][1]));
  }
}

template <typename S, std::size_t R>
void tile_narrow(std::size_t n, std::size_t k, const typename S::T* a, const typename S::T* b,
                 typename S::T* c, std::size_t j) {
  typename S::V acc[R];
  for (std::size_t r = 0; r < R; ++r) acc[r] = S::zero();
  for (std::size_t p = 0; p < k; ++p) {
    const typename S::V b0 = S::load(b + p * n + j);
    for (std::size_t r = 0; r < R; ++r) acc[r] = S::fmadd(S::splat(a[r * k + p]), b0, acc[r]);
  }
  for (std::size_t r = 0; r < R; ++r) {
    typename S::T* crow = c + r * n + j;
    S::store(crow, S::add(S::load(crow), acc[r]));
  }
}

template <typename S, std::size_t R>
void row_block(std::size_t n, std::size_t k, const typename S::T* a, const typename S::T* b,
               typename S::T* c) {
  constexpr std::size_t w = S::kWidth;
  std::size_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w) tile<S, R>(n, k, a, b, c, j);
  for (; j + w <= n; j += w) tile_narrow<S, R>(n, k, a, b, c, j);
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      typename S::T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[r * k + p] * b[p * n + j];
      c[r * n + j] += acc;
    }
  }
}

template <typename S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a,
             const typename S::T* b, typename S::T* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<S, 4>(n, k, a + i * k, b, c + i * n);
  for (; i < m; ++i) row_block<S, 1>(n, k, a + i * k, b, c + i * n);
}

}  // namespace

float dot_f32(std::size_t n, const float* x, const float* y) { return dot<F32>(n, x, y); }
double dot_f64(std::size_t n, const double* x, const double* y) { return dot<F64>(n, x, y); }
void axpy_f32(std::size_t n, float a, const float* x, float* y) { axpy<F32>(n, a, x, y); }
void axpy_f64(std::size_t n, double a, const double* x, double* y) { axpy<F64>(n, a, x, y); }
void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c) {
  gemm_nn<F32>(m, n, k, a, b, c);
}
void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
  gemm_nn<F64>(m, n, k, a, b, c);
}

}  // namespace dhvt::kernels::avx2
