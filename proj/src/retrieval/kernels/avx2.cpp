// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "alliance/kernels.hpp"

namespace alliance::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

// float*float is exact in double, so fused multiply-add only rounds the sum.
double dot(const float* a, const float* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 va = _mm256_loadu_ps(a + i);
    __m256 vb = _mm256_loadu_ps(b + i);
    __m256d a_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(va));
    __m256d a_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(va, 1));
    __m256d b_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(vb));
    __m256d b_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1));
    acc0 = _mm256_fmadd_pd(a_lo, b_lo, acc0);
    acc1 = _mm256_fmadd_pd(a_hi, b_hi, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double sqnorm(const float* a, std::size_t n) { return dot(a, a, n); }

void dot_rows(const float* matrix, std::size_t rows, std::size_t dim, const float* query, double* out) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = dot(matrix + r * dim, query, dim);
}

}  // namespace

extern const KernelTable kTable{Isa::Avx2, &dot, &sqnorm, &dot_rows};

}  // namespace alliance::kernels::avx2
