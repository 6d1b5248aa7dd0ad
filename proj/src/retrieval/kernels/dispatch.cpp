#include <cstdlib>
#include <string_view>

#include "alliance/kernels.hpp"

namespace alliance::kernels {

#if defined(ALLIANCE_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;
}
#endif
#if defined(ALLIANCE_HAVE_NEON)
namespace neon {
extern const KernelTable kTable;
}
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "unknown";
}

const KernelTable* avx2_table() {
#if defined(ALLIANCE_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2::kTable : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(ALLIANCE_HAVE_NEON)
  return &neon::kTable;  // mandatory on AArch64
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& chosen = []() -> const KernelTable& {
    const char* forced = std::getenv("ALLIANCE_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_table();
    if (const KernelTable* t = avx2_table()) return *t;
    if (const KernelTable* t = neon_table()) return *t;
    return scalar_table();
  }();
  return chosen;
}

}  // namespace alliance::kernels
