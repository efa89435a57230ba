#include "latentdirs/nn.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

#include "latentdirs/simd.hpp"

namespace latentdirs::nn {

std::string to_string(const Shape& s) {
  return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

namespace {

std::vector<float>& scratch(int slot, std::size_t n) {
  thread_local std::vector<float> buffers[4];
  auto& buf = buffers[slot];
  if (buf.size() < n) buf.resize(n);
  return buf;
}

void transpose(int rows, int cols, const float* src, float* dst) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
  }
}

constexpr int kNarrow = 8;

}  // namespace

void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c) {
  const auto& kt = simd::active();
  if (n < kNarrow) {
    auto& bt = scratch(3, static_cast<std::size_t>(n) * k);
    transpose(k, n, b, bt.data());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        c[static_cast<std::size_t>(i) * n + j] += kt.dot(a + static_cast<std::size_t>(i) * k, bt.data() + static_cast<std::size_t>(j) * k, k);
      }
    }
    return;
  }
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<std::size_t>(i) * k + p];
      if (av != 0.0f) kt.axpy(av, b + static_cast<std::size_t>(p) * n, crow, n);
    }
  }
}

void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c) {
  const auto& kt = simd::active();
  if (k < kNarrow) {
    auto& bt = scratch(3, static_cast<std::size_t>(n) * k);
    transpose(n, k, b, bt.data());
    for (int i = 0; i < m; ++i) {
      float* crow = c + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const float av = a[static_cast<std::size_t>(i) * k + p];
        if (av != 0.0f) kt.axpy(av, bt.data() + static_cast<std::size_t>(p) * n, crow, n);
      }
    }
    return;
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      c[static_cast<std::size_t>(i) * n + j] += kt.dot(a + static_cast<std::size_t>(i) * k, b + static_cast<std::size_t>(j) * k, k);
    }
  }
}

void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c) {
  const auto& kt = simd::active();
  if (n < kNarrow) {
    // C^T[N x K] += B^T[N x M] * A[M x K], accumulated row by row.
    auto& ct = scratch(3, static_cast<std::size_t>(n) * k);
    std::fill_n(ct.begin(), static_cast<std::size_t>(n) * k, 0.0f);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const float bv = b[static_cast<std::size_t>(i) * n + j];
        if (bv != 0.0f) kt.axpy(bv, a + static_cast<std::size_t>(i) * k, ct.data() + static_cast<std::size_t>(j) * k, k);
      }
    }
    for (int j = 0; j < n; ++j) {
      for (int p = 0; p < k; ++p) c[static_cast<std::size_t>(p) * n + j] += ct[static_cast<std::size_t>(j) * k + p];
    }
    return;
  }
  for (int i = 0; i < m; ++i) {
    const float* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<std::size_t>(i) * k + p];
      if (av != 0.0f) kt.axpy(av, brow, c + static_cast<std::size_t>(p) * n, n);
    }
  }
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(Shape in, int out_channels, int kernel, int padding)
    : Layer(in, Shape{out_channels, in.h + 2 * padding - kernel + 1, in.w + 2 * padding - kernel + 1}),
      kernel_(kernel),
      padding_(padding) {
  if (out_.h <= 0 || out_.w <= 0) {
    throw std::invalid_argument("conv" + std::to_string(kernel) + " does not fit input " + to_string(in));
  }
}

std::size_t Conv2d::param_count() const {
  return static_cast<std::size_t>(out_.c) * in_.c * kernel_ * kernel_ + out_.c;
}

void Conv2d::init(std::span<float> params, Rng& rng) const {
  const double fan_in = static_cast<double>(in_.c) * kernel_ * kernel_;
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  const std::size_t nw = param_count() - out_.c;
  for (std::size_t i = 0; i < nw; ++i) params[i] = static_cast<float>(normal(rng));
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), 0.0f);
}

void Conv2d::im2col(const float* x, float* col) const {
  const int ho = out_.h;
  const int wo = out_.w;
  std::size_t row = 0;
  for (int c = 0; c < in_.c; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * in_.h * in_.w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        float* dst = col + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy + ky - padding_;
          if (iy < 0 || iy >= in_.h) {
            std::fill_n(dst + static_cast<std::size_t>(oy) * wo, wo, 0.0f);
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox + kx - padding_;
            dst[static_cast<std::size_t>(oy) * wo + ox] = (ix >= 0 && ix < in_.w) ? xc[static_cast<std::size_t>(iy) * in_.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const float* col, float* gx) const {
  const int ho = out_.h;
  const int wo = out_.w;
  std::fill_n(gx, in_.size(), 0.0f);
  std::size_t row = 0;
  for (int c = 0; c < in_.c; ++c) {
    float* gc = gx + static_cast<std::size_t>(c) * in_.h * in_.w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        const float* src = col + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy + ky - padding_;
          if (iy < 0 || iy >= in_.h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox + kx - padding_;
            if (ix >= 0 && ix < in_.w) gc[static_cast<std::size_t>(iy) * in_.w + ix] += src[static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

void Conv2d::forward(std::span<const float> params, std::span<const float> x,
                     std::span<float> y) const {
  const int kdim = in_.c * kernel_ * kernel_;
  const int pix = out_.h * out_.w;
  auto& col = scratch(0, static_cast<std::size_t>(kdim) * pix);
  im2col(x.data(), col.data());
  const float* bias = params.data() + static_cast<std::size_t>(out_.c) * kdim;
  for (int oc = 0; oc < out_.c; ++oc) std::fill_n(y.data() + static_cast<std::size_t>(oc) * pix, pix, bias[oc]);
  gemm_nn(out_.c, pix, kdim, params.data(), col.data(), y.data());
}

void Conv2d::backward(std::span<const float> params, std::span<const float> x,
                      std::span<const float> /*y*/, std::span<const float> gy, std::span<float> gx,
                      std::span<float> gparams) const {
  const int kdim = in_.c * kernel_ * kernel_;
  const int pix = out_.h * out_.w;
  auto& col = scratch(0, static_cast<std::size_t>(kdim) * pix);
  im2col(x.data(), col.data());
  gemm_nt(out_.c, kdim, pix, gy.data(), col.data(), gparams.data());
  float* gbias = gparams.data() + static_cast<std::size_t>(out_.c) * kdim;
  for (int oc = 0; oc < out_.c; ++oc) {
    const float* g = gy.data() + static_cast<std::size_t>(oc) * pix;
    float s = 0.0f;
    for (int p = 0; p < pix; ++p) s += g[p];
    gbias[oc] += s;
  }
  if (gx.empty()) return;
  auto& gcol = scratch(1, static_cast<std::size_t>(kdim) * pix);
  std::fill_n(gcol.begin(), static_cast<std::size_t>(kdim) * pix, 0.0f);
  gemm_tn(out_.c, pix, kdim, params.data(), gy.data(), gcol.data());
  col2im(gcol.data(), gx.data());
}

// ---------------------------------------------------------------- Linear

Linear::Linear(Shape in, int out_features, bool zero_init)
    : Layer(in, Shape{out_features, 1, 1}), zero_init_(zero_init) {}

std::size_t Linear::param_count() const { return out_.c * in_.size() + out_.c; }

void Linear::init(std::span<float> params, Rng& rng) const {
  if (zero_init_) {
    std::fill(params.begin(), params.end(), 0.0f);
    return;
  }
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in_.size())));
  const std::size_t nw = param_count() - out_.c;
  for (std::size_t i = 0; i < nw; ++i) params[i] = static_cast<float>(normal(rng));
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), 0.0f);
}

void Linear::forward(std::span<const float> params, std::span<const float> x,
                     std::span<float> y) const {
  const auto& kt = simd::active();
  const std::size_t n = in_.size();
  const float* bias = params.data() + out_.c * n;
  for (int o = 0; o < out_.c; ++o) y[o] = bias[o] + kt.dot(params.data() + o * n, x.data(), n);
}

void Linear::backward(std::span<const float> params, std::span<const float> x,
                      std::span<const float> /*y*/, std::span<const float> gy, std::span<float> gx,
                      std::span<float> gparams) const {
  const auto& kt = simd::active();
  const std::size_t n = in_.size();
  for (int o = 0; o < out_.c; ++o) {
    if (gy[o] != 0.0f) kt.axpy(gy[o], x.data(), gparams.data() + o * n, n);
    gparams[out_.c * n + o] += gy[o];
  }
  if (gx.empty()) return;
  std::fill(gx.begin(), gx.end(), 0.0f);
  for (int o = 0; o < out_.c; ++o) {
    if (gy[o] != 0.0f) kt.axpy(gy[o], params.data() + o * n, gx.data(), n);
  }
}

// ---------------------------------------------------------------- ReLU

void ReLU::forward(std::span<const float>, std::span<const float> x, std::span<float> y) const {
  simd::active().relu(x.data(), y.data(), x.size());
}

void ReLU::backward(std::span<const float>, std::span<const float> x, std::span<const float>,
                    std::span<const float> gy, std::span<float> gx, std::span<float>) const {
  if (gx.empty()) return;
  std::copy(gy.begin(), gy.end(), gx.begin());
  simd::active().relu_mask(x.data(), gx.data(), gx.size());
}

// ---------------------------------------------------------------- MaxPool2

MaxPool2::MaxPool2(Shape in) : Layer(in, Shape{in.c, in.h / 2, in.w / 2}) {
  if (out_.h == 0 || out_.w == 0) throw std::invalid_argument("maxpool2 on input " + to_string(in));
}

void MaxPool2::forward(std::span<const float>, std::span<const float> x, std::span<float> y) const {
  for (int c = 0; c < in_.c; ++c) {
    const float* xc = x.data() + static_cast<std::size_t>(c) * in_.h * in_.w;
    float* yc = y.data() + static_cast<std::size_t>(c) * out_.h * out_.w;
    for (int oy = 0; oy < out_.h; ++oy) {
      const float* r0 = xc + static_cast<std::size_t>(2 * oy) * in_.w;
      const float* r1 = r0 + in_.w;
      for (int ox = 0; ox < out_.w; ++ox) {
        yc[oy * out_.w + ox] = std::max(std::max(r0[2 * ox], r0[2 * ox + 1]), std::max(r1[2 * ox], r1[2 * ox + 1]));
      }
    }
  }
}

void MaxPool2::backward(std::span<const float>, std::span<const float> x, std::span<const float> y,
                        std::span<const float> gy, std::span<float> gx, std::span<float>) const {
  if (gx.empty()) return;
  std::fill(gx.begin(), gx.end(), 0.0f);
  for (int c = 0; c < in_.c; ++c) {
    const std::size_t xoff = static_cast<std::size_t>(c) * in_.h * in_.w;
    const std::size_t yoff = static_cast<std::size_t>(c) * out_.h * out_.w;
    for (int oy = 0; oy < out_.h; ++oy) {
      for (int ox = 0; ox < out_.w; ++ox) {
        const float m = y[yoff + oy * out_.w + ox];
        // Route the gradient to the first maximal element in raster order.
        const std::size_t cand[4] = {xoff + (2 * oy) * in_.w + 2 * ox, xoff + (2 * oy) * in_.w + 2 * ox + 1,
                                     xoff + (2 * oy + 1) * in_.w + 2 * ox, xoff + (2 * oy + 1) * in_.w + 2 * ox + 1};
        for (std::size_t idx : cand) {
          if (x[idx] == m) {
            gx[idx] += gy[yoff + oy * out_.w + ox];
            break;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------- GlobalAvgPool

void GlobalAvgPool::forward(std::span<const float>, std::span<const float> x, std::span<float> y) const {
  const std::size_t plane = static_cast<std::size_t>(in_.h) * in_.w;
  for (int c = 0; c < in_.c; ++c) {
    float s = 0.0f;
    for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
    y[c] = s / static_cast<float>(plane);
  }
}

void GlobalAvgPool::backward(std::span<const float>, std::span<const float>, std::span<const float>,
                             std::span<const float> gy, std::span<float> gx, std::span<float>) const {
  if (gx.empty()) return;
  const std::size_t plane = static_cast<std::size_t>(in_.h) * in_.w;
  for (int c = 0; c < in_.c; ++c) {
    const float g = gy[c] / static_cast<float>(plane);
    std::fill_n(gx.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, g);
  }
}

// ---------------------------------------------------------------- Upsample2

void Upsample2::forward(std::span<const float>, std::span<const float> x, std::span<float> y) const {
  for (int c = 0; c < in_.c; ++c) {
    for (int oy = 0; oy < out_.h; ++oy) {
      for (int ox = 0; ox < out_.w; ++ox) {
        y[(static_cast<std::size_t>(c) * out_.h + oy) * out_.w + ox] = x[(static_cast<std::size_t>(c) * in_.h + oy / 2) * in_.w + ox / 2];
      }
    }
  }
}

void Upsample2::backward(std::span<const float>, std::span<const float>, std::span<const float>,
                         std::span<const float> gy, std::span<float> gx, std::span<float>) const {
  if (gx.empty()) return;
  std::fill(gx.begin(), gx.end(), 0.0f);
  for (int c = 0; c < in_.c; ++c) {
    for (int oy = 0; oy < out_.h; ++oy) {
      for (int ox = 0; ox < out_.w; ++ox) {
        gx[(static_cast<std::size_t>(c) * in_.h + oy / 2) * in_.w + ox / 2] += gy[(static_cast<std::size_t>(c) * out_.h + oy) * out_.w + ox];
      }
    }
  }
}

// ---------------------------------------------------------------- Sequential

void Sequential::init(std::span<float> params, Rng& rng) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->init(params.subspan(offsets_[i], layers_[i]->param_count()), rng);
  }
}

void Sequential::forward(std::span<const float> params, std::span<const float> x, Trace& trace) const {
  if (x.size() != input_.size()) throw std::invalid_argument("input size mismatch for " + to_string(input_));
  trace.acts.resize(layers_.size() + 1);
  trace.acts[0].assign(x.begin(), x.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    trace.acts[i + 1].resize(layers_[i]->output_shape().size());
    layers_[i]->forward(params.subspan(offsets_[i], layers_[i]->param_count()), trace.acts[i],
                        trace.acts[i + 1]);
  }
}

void Sequential::backward(std::span<const float> params, const Trace& trace,
                          std::span<const float> gout, std::span<float> gparams,
                          std::span<float> ginput) const {
  std::vector<float> g(gout.begin(), gout.end());
  std::vector<float> gprev;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need_input_grad = i > 0 || !ginput.empty();
    gprev.assign(need_input_grad ? layers_[i]->input_shape().size() : 0, 0.0f);
    const std::size_t np = layers_[i]->param_count();
    layers_[i]->backward(params.subspan(offsets_[i], np), trace.acts[i], trace.acts[i + 1], g, gprev,
                         gparams.subspan(offsets_[i], np));
    g.swap(gprev);
  }
  if (!ginput.empty()) std::copy(g.begin(), g.end(), ginput.begin());
}

// ---------------------------------------------------------------- Adam

void Adam::step(std::span<const ParamSlot> slots) {
  if (m_.size() != slots.size()) {
    m_.assign(slots.size(), {});
    v_.assign(slots.size(), {});
    for (std::size_t s = 0; s < slots.size(); ++s) {
      m_[s].assign(slots[s].value.size(), 0.0);
      v_[s].assign(slots[s].value.size(), 0.0);
    }
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    auto value = slots[s].value;
    auto grad = slots[s].grad;
    if (grad.size() != value.size() || m_[s].size() != value.size()) {
      throw std::invalid_argument("Adam slot size changed between steps");
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m_[s][i] = b1 * m_[s][i] + (1.0 - b1) * g;
      v_[s][i] = b2 * v_[s][i] + (1.0 - b2) * g * g;
      const double mhat = m_[s][i] / c1;
      const double vhat = v_[s][i] / c2;
      value[i] = static_cast<float>(value[i] - options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon));
    }
  }
}

// ---------------------------------------------------------------- helpers

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double softmax_cross_entropy(std::span<const float> logits, int target, double temperature,
                             std::span<float> grad) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw std::out_of_range("cross-entropy target out of range");
  }
  double mx = -INFINITY;
  for (float v : logits) {
    if (!std::isfinite(v)) throw std::domain_error("non-finite logit");
    mx = std::max(mx, static_cast<double>(v) / temperature);
  }
  double denom = 0.0;
  for (float v : logits) denom += std::exp(static_cast<double>(v) / temperature - mx);
  const double log_z = mx + std::log(denom);
  const double loss = log_z - static_cast<double>(logits[static_cast<std::size_t>(target)]) / temperature;
  if (!grad.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double p = std::exp(static_cast<double>(logits[i]) / temperature - log_z);
      grad[i] = static_cast<float>((p - (static_cast<int>(i) == target ? 1.0 : 0.0)) / temperature);
    }
  }
  return loss;
}

int argmax(std::span<const float> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace latentdirs::nn
