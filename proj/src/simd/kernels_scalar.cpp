#include <cmath>
#include <limits>

#include "scoreid/simd.hpp"

namespace scoreid::simd {
namespace {

void diag_gauss_terms(const double* x, const double* means, const double* inv_vars,
                      const double* bias, std::size_t dim, std::size_t mixtures,
                      double* out) {
  for (std::size_t m = 0; m < mixtures; ++m) {
    const double* mu = means + m * dim;
    const double* iv = inv_vars + m * dim;
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = x[d] - mu[d];
      acc += diff * diff * iv[d];
    }
    out[m] = bias[m] - 0.5 * acc;
  }
}

void accumulate_moments(double w, const double* x, std::size_t dim, double* sum,
                        double* sumsq) {
  for (std::size_t d = 0; d < dim; ++d) {
    const double wx = w * x[d];
    sum[d] += wx;
    sumsq[d] += wx * x[d];
  }
}

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double diff = a[d] - b[d];
    acc += diff * diff;
  }
  return acc;
}

double log_sum_exp(const double* v, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = v[i] > mx ? v[i] : mx;
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k{Isa::Scalar, diag_gauss_terms, accumulate_moments,
                         squared_distance, log_sum_exp};
  return k;
}

}  // namespace scoreid::simd
