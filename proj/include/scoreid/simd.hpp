#pragma once

// Data-parallel inner loops used by the Gaussian-mixture engine. Each kernel
// has a portable scalar reference and, on x86-64, an AVX2/FMA variant. The
// variant is picked once at startup from CPUID; set SCOREID_SIMD=scalar to
// force the reference path.

#include <cstddef>
#include <string_view>

namespace scoreid::simd {

enum class Isa { Scalar, Avx2 };

struct Kernels {
  Isa isa;

  // out[m] = bias[m] - 0.5 * sum_d (x[d] - means[m,d])^2 * inv_vars[m,d]
  // means / inv_vars are row-major mixtures x dim.
  void (*diag_gauss_terms)(const double* x, const double* means,
                           const double* inv_vars, const double* bias,
                           std::size_t dim, std::size_t mixtures, double* out);

  // sum[d] += w * x[d]; sumsq[d] += w * x[d]^2
  void (*accumulate_moments)(double w, const double* x, std::size_t dim,
                             double* sum, double* sumsq);

  double (*squared_distance)(const double* a, const double* b, std::size_t dim);

  // log(sum_i exp(v[i])), shifted by the maximum; -inf if all are -inf.
  double (*log_sum_exp)(const double* v, std::size_t n);
};

const Kernels& scalar_kernels();

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks it.
const Kernels* avx2_kernels();

/// Runtime-selected kernel table.
const Kernels& kernels();

std::string_view isa_name(Isa isa);

}  // namespace scoreid::simd
