#include "adan/simd/kernels.hpp"
#include "adan/simd/reference.hpp"

namespace adan::simd {

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      Isa::Scalar,
      &reference::dot<float>,
      &reference::squared_distance<float>,
      &reference::axpy<float>,
      &reference::gemm_nn<float>,
      &reference::gemm_nt<float>,
      &reference::gemm_tn<float>,
  };
  return table;
}

}  // namespace adan::simd
