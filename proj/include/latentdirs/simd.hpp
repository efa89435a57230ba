#pragma once

// Inner-loop kernels with a scalar reference path and an AVX2/FMA path
// selected at runtime. Every kernel in the AVX2 table must agree with its
// scalar counterpart up to float reassociation error.

#include <cstddef>
#include <string_view>

namespace latentdirs::simd {

struct KernelTable {
  std::string_view name;
  // sum_i x[i] * y[i]
  float (*dot)(const float* x, const float* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(float a, const float* x, float* y, std::size_t n);
  // y[i] = max(x[i], 0)
  void (*relu)(const float* x, float* y, std::size_t n);
  // g[i] = x[i] > 0 ? g[i] : 0
  void (*relu_mask)(const float* x, float* g, std::size_t n);
  // y[i] += x[i]
  void (*add)(const float* x, float* y, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels();

// Kernel table used by the library. AVX2 when available unless the
// environment variable LATENTDIRS_SIMD is set to "scalar".
const KernelTable& active();

// Overrides the active table (tests and benchmarks). Not thread-safe.
void set_active(const KernelTable& table);

}  // namespace latentdirs::simd
