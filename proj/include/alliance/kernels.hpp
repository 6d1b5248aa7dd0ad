#pragma once

// Dense float32 inner-product kernels. Every kernel accumulates in double so
// that the SIMD variants agree with the scalar reference to rounding error.

#include <cstddef>
#include <string_view>

namespace alliance::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  double (*dot)(const float* a, const float* b, std::size_t n);
  double (*sqnorm)(const float* a, std::size_t n);
  // out[r] = dot(matrix + r * dim, query) for r in [0, rows)
  void (*dot_rows)(const float* matrix, std::size_t rows, std::size_t dim, const float* query,
                   double* out);
};

const KernelTable& scalar_table();

/// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// Best table for this CPU. ALLIANCE_SIMD=scalar forces the reference path.
const KernelTable& active();

}  // namespace alliance::kernels
