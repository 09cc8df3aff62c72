#include <cstdlib>
#include <string_view>

#include "scoreid/simd.hpp"

namespace scoreid::simd {

#ifdef SCOREID_HAVE_AVX2
const Kernels& avx2_kernel_table();
#endif

const Kernels* avx2_kernels() {
#ifdef SCOREID_HAVE_AVX2
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const Kernels& kernels() {
  static const Kernels& active = [] () -> const Kernels& {
    const char* env = std::getenv("SCOREID_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar_kernels();
    if (const Kernels* k = avx2_kernels()) return *k;
    return scalar_kernels();
  }();
  return active;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

}  // namespace scoreid::simd
