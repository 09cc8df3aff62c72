// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include <immintrin.h>

#include <cmath>
#include <limits>

#include "scoreid/simd.hpp"

namespace scoreid::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void diag_gauss_terms(const double* x, const double* means, const double* inv_vars,
                      const double* bias, std::size_t dim, std::size_t mixtures,
                      double* out) {
  const std::size_t vec_end = dim & ~std::size_t{7};
  for (std::size_t m = 0; m < mixtures; ++m) {
    const double* mu = means + m * dim;
    const double* iv = inv_vars + m * dim;
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t d = 0;
    for (; d < vec_end; d += 8) {
      const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + d), _mm256_loadu_pd(mu + d));
      const __m256d d1 =
          _mm256_sub_pd(_mm256_loadu_pd(x + d + 4), _mm256_loadu_pd(mu + d + 4));
      acc0 = _mm256_fmadd_pd(_mm256_mul_pd(d0, d0), _mm256_loadu_pd(iv + d), acc0);
      acc1 = _mm256_fmadd_pd(_mm256_mul_pd(d1, d1), _mm256_loadu_pd(iv + d + 4), acc1);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; d < dim; ++d) {
      const double diff = x[d] - mu[d];
      acc += diff * diff * iv[d];
    }
    out[m] = bias[m] - 0.5 * acc;
  }
}

void accumulate_moments(double w, const double* x, std::size_t dim, double* sum,
                        double* sumsq) {
  const __m256d wv = _mm256_set1_pd(w);
  std::size_t d = 0;
  for (; d + 4 <= dim; d += 4) {
    const __m256d xv = _mm256_loadu_pd(x + d);
    const __m256d wx = _mm256_mul_pd(wv, xv);
    _mm256_storeu_pd(sum + d, _mm256_add_pd(_mm256_loadu_pd(sum + d), wx));
    _mm256_storeu_pd(sumsq + d, _mm256_fmadd_pd(wx, xv, _mm256_loadu_pd(sumsq + d)));
  }
  for (; d < dim; ++d) {
    const double wx = w * x[d];
    sum[d] += wx;
    sumsq[d] += wx * x[d];
  }
}

double squared_distance(const double* a, const double* b, std::size_t dim) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t d = 0;
  for (; d + 4 <= dim; d += 4) {
    const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(a + d), _mm256_loadu_pd(b + d));
    acc = _mm256_fmadd_pd(diff, diff, acc);
  }
  double s = hsum(acc);
  for (; d < dim; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

// Vector max; the exponentials stay scalar (libm accuracy, no polynomial).
double log_sum_exp(const double* v, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d mv = _mm256_loadu_pd(v);
    for (i = 4; i + 4 <= n; i += 4) mv = _mm256_max_pd(mv, _mm256_loadu_pd(v + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, mv);
    for (double l : lanes) mx = l > mx ? l : mx;
  }
  for (; i < n; ++i) mx = v[i] > mx ? v[i] : mx;
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(v[j] - mx);
  return mx + std::log(s);
}

}  // namespace

const Kernels& avx2_kernel_table() {
  static const Kernels k{Isa::Avx2, diag_gauss_terms, accumulate_moments,
                         squared_distance, log_sum_exp};
  return k;
}

}  // namespace scoreid::simd
