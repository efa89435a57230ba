#include "latentdirs/reconstructor.hpp"

#include <algorithm>
#include <cmath>

#include "latentdirs/error.hpp"
#include "latentdirs/io.hpp"

namespace latentdirs {

namespace {

nn::Sequential build_backbone(const NetConfig& cfg) {
  nn::Sequential net(cfg.input);
  if (cfg.architecture == "lenet") {
    if (cfg.input.h < 32 || cfg.input.w < 32) {
      throw Error(ErrorKind::Validation, "lenet backbone needs inputs of at least 32x32");
    }
    net.add<nn::Conv2d>(6, 5).add<nn::ReLU>().add<nn::MaxPool2>();
    net.add<nn::Conv2d>(16, 5).add<nn::ReLU>().add<nn::MaxPool2>();
    net.add<nn::Conv2d>(120, 5).add<nn::ReLU>().add<nn::GlobalAvgPool>();
    net.add<nn::Linear>(84).add<nn::ReLU>();
  } else if (cfg.architecture == "tiny") {
    net.add<nn::Conv2d>(4, 3, 1).add<nn::ReLU>().add<nn::MaxPool2>().add<nn::GlobalAvgPool>();
    net.add<nn::Linear>(8).add<nn::ReLU>();
  } else {
    throw Error(ErrorKind::Unsupported, "unknown architecture '" + cfg.architecture + "'");
  }
  return net;
}

}  // namespace

ConvNet::ConvNet(NetConfig config, Rng& rng) : config_(std::move(config)), backbone_(build_backbone(config_)) {
  if (config_.num_classes < 1) throw Error(ErrorKind::Validation, "network needs at least one class");
  const std::size_t f = static_cast<std::size_t>(feature_dim());
  head_class_offset_ = backbone_.param_count();
  head_shift_offset_ = head_class_offset_ + (f + 1) * config_.num_classes;
  params_.assign(head_shift_offset_ + (config_.regression_head ? f + 1 : 0), 0.0f);
  backbone_.init(std::span<float>(params_).first(head_class_offset_), rng);
  if (!config_.zero_init_heads) {
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / static_cast<double>(f)));
    for (int o = 0; o < config_.num_classes; ++o) {
      for (std::size_t i = 0; i < f; ++i) params_[head_class_offset_ + o * f + i] = static_cast<float>(normal(rng));
    }
    if (config_.regression_head) {
      for (std::size_t i = 0; i < f; ++i) params_[head_shift_offset_ + i] = static_cast<float>(normal(rng));
    }
  }
}

NetOutput ConvNet::forward(std::span<const float> input, Cache* cache) const {
  if (input.size() != config_.input.size()) {
    throw Error(ErrorKind::ShapeMismatch, "network input has " + std::to_string(input.size()) +
                                              " values, expected " + nn::to_string(config_.input));
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  backbone_.forward(params_, input, c.trace);
  const auto feat = c.trace.output();
  const std::size_t f = feat.size();
  const float* w = params_.data() + head_class_offset_;
  const float* b = w + f * config_.num_classes;
  NetOutput out;
  out.logits.resize(static_cast<std::size_t>(config_.num_classes));
  for (int o = 0; o < config_.num_classes; ++o) {
    float acc = b[o];
    for (std::size_t i = 0; i < f; ++i) acc += w[o * f + i] * feat[i];
    out.logits[static_cast<std::size_t>(o)] = acc;
  }
  if (config_.regression_head) {
    const float* ws = params_.data() + head_shift_offset_;
    float acc = ws[f];
    for (std::size_t i = 0; i < f; ++i) acc += ws[i] * feat[i];
    out.epsilon_hat = acc;
  }
  return out;
}

void ConvNet::backward(const Cache& cache, std::span<const float> grad_logits, float grad_epsilon,
                       std::span<float> gparams, std::span<float> ginput) const {
  const auto feat = cache.trace.output();
  const std::size_t f = feat.size();
  std::vector<float> gfeat(f, 0.0f);
  const float* w = params_.data() + head_class_offset_;
  float* gw = gparams.data() + head_class_offset_;
  for (int o = 0; o < config_.num_classes; ++o) {
    const float g = grad_logits[static_cast<std::size_t>(o)];
    if (g == 0.0f) continue;
    for (std::size_t i = 0; i < f; ++i) {
      gw[o * f + i] += g * feat[i];
      gfeat[i] += g * w[o * f + i];
    }
    gw[f * config_.num_classes + o] += g;
  }
  if (config_.regression_head && grad_epsilon != 0.0f) {
    const float* ws = params_.data() + head_shift_offset_;
    float* gws = gparams.data() + head_shift_offset_;
    for (std::size_t i = 0; i < f; ++i) {
      gws[i] += grad_epsilon * feat[i];
      gfeat[i] += grad_epsilon * ws[i];
    }
    gws[f] += grad_epsilon;
  }
  backbone_.backward(params_, cache.trace, gfeat, gparams.first(head_class_offset_), ginput);
}

void ConvNet::save(const std::filesystem::path& path) const {
  io::save_params(path, params_,
                  {{"architecture", config_.architecture},
                   {"K", config_.num_classes},
                   {"input_channels", config_.input.c},
                   {"height", config_.input.h},
                   {"width", config_.input.w},
                   {"regression_head", config_.regression_head}});
}

ConvNet ConvNet::load(const std::filesystem::path& path) {
  io::Json meta;
  auto params = io::load_params(path, &meta);
  NetConfig cfg;
  try {
    cfg.architecture = meta.at("architecture").get<std::string>();
    cfg.num_classes = meta.at("K").get<int>();
    cfg.input = nn::Shape{meta.at("input_channels").get<int>(), meta.at("height").get<int>(), meta.at("width").get<int>()};
    cfg.regression_head = meta.value("regression_head", true);
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed checkpoint metadata: ") + e.what());
  }
  Rng rng(0);
  ConvNet net(cfg, rng);
  if (params.size() != net.params_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "checkpoint has " + std::to_string(params.size()) + " parameters, architecture needs " +
                                              std::to_string(net.params_.size()));
  }
  net.params_ = std::move(params);
  return net;
}

std::vector<float> concat_pair(const Image& first, const Image& second) {
  if (!(first.shape == second.shape)) throw Error(ErrorKind::ShapeMismatch, "image pair shapes differ");
  std::vector<float> out;
  out.reserve(first.pixels.size() * 2);
  out.insert(out.end(), first.pixels.begin(), first.pixels.end());
  out.insert(out.end(), second.pixels.begin(), second.pixels.end());
  return out;
}

NetConfig reconstructor_config(ImageShape image, int num_directions, std::string architecture) {
  NetConfig cfg;
  cfg.architecture = std::move(architecture);
  cfg.input = nn::Shape{2 * image.channels, image.height, image.width};
  cfg.num_classes = num_directions;
  cfg.regression_head = true;
  return cfg;
}

}  // namespace latentdirs
