#include <atomic>
#include <cstdlib>
#include <string>

#include "adan/error.hpp"
#include "adan/simd/kernels.hpp"

namespace adan::simd {

#ifndef ADAN_HAS_AVX2_KERNELS
const KernelTable* avx2_kernels() { return nullptr; }
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::Scalar};
  if (cpu_supports(Isa::Avx2)) out.push_back(Isa::Avx2);
  return out;
}

namespace {

const KernelTable* table_for(Isa isa) { return isa == Isa::Avx2 ? avx2_kernels() : &scalar_kernels(); }

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ADAN_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && cpu_supports(Isa::Avx2)) return avx2_kernels();
  }
  return cpu_supports(Isa::Avx2) ? avx2_kernels() : &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

const KernelTable& active_kernels() { return *active_slot().load(std::memory_order_acquire); }

void select_isa(Isa isa) {
  if (!cpu_supports(isa)) throw ArgumentError("SIMD variant '" + std::string(isa_name(isa)) + "' is unavailable");
  active_slot().store(table_for(isa), std::memory_order_release);
}

Isa active_isa() { return active_kernels().isa; }

}  // namespace adan::simd
