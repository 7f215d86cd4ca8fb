#pragma once

// Type-directed front end used by the layer code: float goes through the
// active dispatch table, double through the scalar reference.

#include "adan/simd/kernels.hpp"
#include "adan/simd/reference.hpp"

namespace adan::simd {

inline float dot(const float* a, const float* b, std::size_t n) { return active_kernels().dot(a, b, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return reference::dot(a, b, n); }

inline float squared_distance(const float* a, const float* b, std::size_t n) {
  return active_kernels().squared_distance(a, b, n);
}
inline double squared_distance(const double* a, const double* b, std::size_t n) {
  return reference::squared_distance(a, b, n);
}

inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active_kernels().axpy(alpha, x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { reference::axpy(alpha, x, y, n); }

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                    bool accumulate) {
  active_kernels().gemm_nn(m, n, k, a, b, c, accumulate);
}
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                    bool accumulate) {
  reference::gemm_nn(m, n, k, a, b, c, accumulate);
}

inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                    bool accumulate) {
  active_kernels().gemm_nt(m, n, k, a, b, c, accumulate);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                    bool accumulate) {
  reference::gemm_nt(m, n, k, a, b, c, accumulate);
}

inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                    bool accumulate) {
  active_kernels().gemm_tn(m, n, k, a, b, c, accumulate);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                    bool accumulate) {
  reference::gemm_tn(m, n, k, a, b, c, accumulate);
}

}  // namespace adan::simd
