#pragma once

// Minimal CPU neural-network toolkit: stateless layers over flat parameter
// arrays, a sequential container that records activations for backprop,
// and Adam. Models own a single std::vector<float> of parameters so that
// checkpoints are plain float32 arrays.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace latentdirs {

using Rng = std::mt19937_64;

namespace nn {

struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Dense row-major products used by the layers. `C` is accumulated into.
// C[M x N] += A[M x K] * B[K x N]
void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c);
// C[M x N] += A[M x K] * B[N x K]^T
void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c);
// C[K x N] += A[M x K]^T * B[M x N]
void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c);

class Layer {
 public:
  virtual ~Layer() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] const Shape& input_shape() const { return in_; }
  [[nodiscard]] const Shape& output_shape() const { return out_; }
  [[nodiscard]] virtual std::size_t param_count() const { return 0; }
  virtual void init(std::span<float> /*params*/, Rng& /*rng*/) const {}

  virtual void forward(std::span<const float> params, std::span<const float> x,
                       std::span<float> y) const = 0;
  // Writes dL/dx into gx (if non-empty) and accumulates dL/dparams into gparams.
  virtual void backward(std::span<const float> params, std::span<const float> x,
                        std::span<const float> y, std::span<const float> gy, std::span<float> gx,
                        std::span<float> gparams) const = 0;

 protected:
  Layer(Shape in, Shape out) : in_(in), out_(out) {}
  Shape in_;
  Shape out_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(Shape in, int out_channels, int kernel, int padding = 0);
  std::string name() const override { return "conv" + std::to_string(kernel_); }
  std::size_t param_count() const override;
  void init(std::span<float> params, Rng& rng) const override;
  void forward(std::span<const float> params, std::span<const float> x,
               std::span<float> y) const override;
  void backward(std::span<const float> params, std::span<const float> x, std::span<const float> y,
                std::span<const float> gy, std::span<float> gx,
                std::span<float> gparams) const override;

 private:
  void im2col(const float* x, float* col) const;
  void col2im(const float* col, float* gx) const;
  int kernel_;
  int padding_;
};

class Linear final : public Layer {
 public:
  Linear(Shape in, int out_features, bool zero_init = false);
  std::string name() const override { return "linear"; }
  std::size_t param_count() const override;
  void init(std::span<float> params, Rng& rng) const override;
  void forward(std::span<const float> params, std::span<const float> x,
               std::span<float> y) const override;
  void backward(std::span<const float> params, std::span<const float> x, std::span<const float> y,
                std::span<const float> gy, std::span<float> gx,
                std::span<float> gparams) const override;

 private:
  bool zero_init_;
};

class ReLU final : public Layer {
 public:
  explicit ReLU(Shape in) : Layer(in, in) {}
  std::string name() const override { return "relu"; }
  void forward(std::span<const float> params, std::span<const float> x,
               std::span<float> y) const override;
  void backward(std::span<const float> params, std::span<const float> x, std::span<const float> y,
                std::span<const float> gy, std::span<float> gx,
                std::span<float> gparams) const override;
};

// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
class MaxPool2 final : public Layer {
 public:
  explicit MaxPool2(Shape in);
  std::string name() const override { return "maxpool2"; }
  void forward(std::span<const float> params, std::span<const float> x,
               std::span<float> y) const override;
  void backward(std::span<const float> params, std::span<const float> x, std::span<const float> y,
                std::span<const float> gy, std::span<float> gx,
                std::span<float> gparams) const override;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(Shape in) : Layer(in, Shape{in.c, 1, 1}) {}
  std::string name() const override { return "gap"; }
  void forward(std::span<const float> params, std::span<const float> x,
               std::span<float> y) const override;
  void backward(std::span<const float> params, std::span<const float> x, std::span<const float> y,
                std::span<const float> gy, std::span<float> gx,
                std::span<float> gparams) const override;
};

// Nearest-neighbour 2x upsampling.
class Upsample2 final : public Layer {
 public:
  explicit Upsample2(Shape in) : Layer(in, Shape{in.c, in.h * 2, in.w * 2}) {}
  std::string name() const override { return "upsample2"; }
  void forward(std::span<const float> params, std::span<const float> x,
               std::span<float> y) const override;
  void backward(std::span<const float> params, std::span<const float> x, std::span<const float> y,
                std::span<const float> gy, std::span<float> gx,
                std::span<float> gparams) const override;
};

// Activations recorded by Sequential::forward. acts[0] is the input.
struct Trace {
  std::vector<std::vector<float>> acts;
  [[nodiscard]] std::span<const float> output() const { return acts.back(); }
};

class Sequential {
 public:
  explicit Sequential(Shape input) : input_(input), output_(input) {}

  template <typename L, typename... Args>
  Sequential& add(Args&&... args) {
    auto layer = std::make_shared<const L>(output_, std::forward<Args>(args)...);
    offsets_.push_back(num_params_);
    num_params_ += layer->param_count();
    output_ = layer->output_shape();
    layers_.push_back(std::move(layer));
    return *this;
  }

  [[nodiscard]] const Shape& input_shape() const { return input_; }
  [[nodiscard]] const Shape& output_shape() const { return output_; }
  [[nodiscard]] std::size_t param_count() const { return num_params_; }
  [[nodiscard]] std::size_t size() const { return layers_.size(); }
  [[nodiscard]] const Layer& layer(std::size_t i) const { return *layers_[i]; }

  void init(std::span<float> params, Rng& rng) const;
  void forward(std::span<const float> params, std::span<const float> x, Trace& trace) const;
  // gparams accumulates; ginput (optional) receives dL/dinput.
  void backward(std::span<const float> params, const Trace& trace, std::span<const float> gout,
                std::span<float> gparams, std::span<float> ginput = {}) const;

 private:
  Shape input_;
  Shape output_;
  std::vector<std::shared_ptr<const Layer>> layers_;  // immutable, shared between copies
  std::vector<std::size_t> offsets_;
  std::size_t num_params_ = 0;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One parameter block and its gradient, updated in place by Adam::step.
struct ParamSlot {
  std::span<float> value;
  std::span<const float> grad;
};

// A single Adam state over an ordered list of parameter blocks. The slot
// list passed to step() must keep the same order and sizes between calls.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(std::span<const ParamSlot> slots);
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  [[nodiscard]] double learning_rate() const { return options_.learning_rate; }
  [[nodiscard]] long steps_taken() const { return t_; }

 private:
  AdamOptions options_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Runs fn(i) for i in [0, n) across hardware threads. Each index is handled
// by exactly one call, so per-index outputs are deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Softmax cross-entropy of logits / temperature against a target index.
// Writes dL/dlogits into grad when non-empty. Returns the loss.
double softmax_cross_entropy(std::span<const float> logits, int target, double temperature,
                             std::span<float> grad = {});

// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const float> values);

}  // namespace nn
}  // namespace latentdirs
