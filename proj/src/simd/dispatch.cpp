#include <cstdlib>
#include <string_view>

#include "latentdirs/simd.hpp"

namespace latentdirs::simd {

#if defined(LATENTDIRS_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(LATENTDIRS_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* select_default() {
  if (const char* env = std::getenv("LATENTDIRS_SIMD"); env && std::string_view(env) == "scalar") {
    return &scalar_kernels();
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

const KernelTable*& active_slot() {
  static const KernelTable* slot = select_default();
  return slot;
}

}  // namespace

const KernelTable& active() { return *active_slot(); }

void set_active(const KernelTable& table) { active_slot() = &table; }

}  // namespace latentdirs::simd
