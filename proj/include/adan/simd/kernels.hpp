#pragma once

// Runtime-dispatched arithmetic kernels. Every ISA variant implements the same
// table; the scalar variant is the reference the vector variants are tested
// against.
//
// Matrices are row-major and densely packed.
//   gemm_nn: C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_nt: C[m,n] (+)= A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] (+)= A[k,m]^T * B[k,n]
// For a fixed ISA and fixed (m, n, k) the result of each output element is a
// deterministic function of its inputs: it does not depend on m or on the
// other rows, so a batch of one and a batch of many agree bitwise.

#include <cstddef>
#include <string_view>
#include <vector>

namespace adan::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot)(const float* a, const float* b, std::size_t n);
  float (*squared_distance)(const float* a, const float* b, std::size_t n);
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                  bool accumulate);
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                  bool accumulate);
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                  bool accumulate);
};

const KernelTable& scalar_kernels();

/// nullptr when the variant was not compiled in.
const KernelTable* avx2_kernels();

bool cpu_supports(Isa isa);

/// ISAs that are both compiled in and supported by this CPU.
std::vector<Isa> available_isas();

/// The table used by the layer primitives. Chosen on first use: the best
/// available ISA, unless ADAN_SIMD=scalar|avx2 overrides it.
const KernelTable& active_kernels();

/// Throws adan::ArgumentError if `isa` is unavailable.
void select_isa(Isa isa);

Isa active_isa();

}  // namespace adan::simd
