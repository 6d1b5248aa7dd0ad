#include "alliance/kernels.hpp"

namespace alliance::kernels {
namespace {

double dot_scalar(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double sqnorm_scalar(const float* a, std::size_t n) { return dot_scalar(a, a, n); }

void dot_rows_scalar(const float* matrix, std::size_t rows, std::size_t dim, const float* query,
                     double* out) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = dot_scalar(matrix + r * dim, query, dim);
}

constexpr KernelTable kScalar{Isa::Scalar, &dot_scalar, &sqnorm_scalar, &dot_rows_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace alliance::kernels
