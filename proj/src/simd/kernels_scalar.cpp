#include "latentdirs/simd.hpp"

namespace latentdirs::simd {
namespace {

float dot_scalar(const float* x, const float* y, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(float a, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void relu_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_mask_scalar(const float* x, float* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0f)) g[i] = 0.0f;
  }
}

void add_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", dot_scalar, axpy_scalar, relu_scalar,
                                 relu_mask_scalar, add_scalar};
  return table;
}

}  // namespace latentdirs::simd
