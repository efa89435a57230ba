#pragma once

// Convolutional two-head network. As the reconstructor R it reads an image
// pair concatenated along channels and predicts (direction logits, shift);
// with one input image and no regression head it is the binary classifier
// used by the DVN protocol.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latentdirs/image.hpp"
#include "latentdirs/nn.hpp"

namespace latentdirs {

struct NetConfig {
  // "lenet": conv5(6)-pool-conv5(16)-pool-conv5(120)-gap-fc(84)
  // "tiny":  conv3(4, pad 1)-pool-gap-fc(8), for gradient checks on 4x4 inputs
  std::string architecture = "lenet";
  nn::Shape input{2, 32, 32};
  int num_classes = 8;
  bool regression_head = true;
  bool zero_init_heads = true;
};

struct NetOutput {
  std::vector<float> logits;
  float epsilon_hat = 0.0f;

  // argmax of logits, lowest index on ties.
  [[nodiscard]] int predicted() const { return nn::argmax(logits); }
};

class ConvNet {
 public:
  struct Cache {
    nn::Trace trace;
  };

  ConvNet(NetConfig config, Rng& rng);

  [[nodiscard]] const NetConfig& config() const { return config_; }
  [[nodiscard]] std::size_t param_count() const { return params_.size(); }
  [[nodiscard]] std::span<float> params() { return params_; }
  [[nodiscard]] std::span<const float> params() const { return params_; }
  [[nodiscard]] int feature_dim() const { return backbone_.output_shape().c; }

  NetOutput forward(std::span<const float> input, Cache* cache = nullptr) const;

  // Accumulates dL/dparams for one sample; writes dL/dinput if ginput is non-empty.
  void backward(const Cache& cache, std::span<const float> grad_logits, float grad_epsilon,
                std::span<float> gparams, std::span<float> ginput = {}) const;

  void save(const std::filesystem::path& path) const;
  static ConvNet load(const std::filesystem::path& path);

 private:
  NetConfig config_;
  nn::Sequential backbone_;
  std::size_t head_class_offset_ = 0;
  std::size_t head_shift_offset_ = 0;
  std::vector<float> params_;
};

// Channel concatenation of an (original, shifted) pair.
std::vector<float> concat_pair(const Image& first, const Image& second);

// The reconstructor R: a ConvNet over 2C input channels with both heads.
NetConfig reconstructor_config(ImageShape image, int num_directions, std::string architecture = "lenet");

}  // namespace latentdirs
