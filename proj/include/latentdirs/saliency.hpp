#pragma once

// Weakly supervised saliency from a background-removal direction: masks are
// read off G(z + s h_bg) by thresholding, filtered by area, and used to train
// a small U-shaped segmenter.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latentdirs/generator.hpp"
#include "latentdirs/io.hpp"
#include "latentdirs/nn.hpp"

namespace latentdirs {

struct SegmenterConfig {
  double temperature = 10.0;
  int steps = 15000;
  double lr = 0.005;
  double lr_decay = 0.2;
  int lr_decay_every = 4000;
  int batch = 128;
  int input_short_side = 128;  // 0 keeps the native resolution
  double area_min = 0.05;
  double area_max = 0.5;
  double theta = 0.95;
  double top_class_fraction = 0.25;
  int top_n_predictions = 5;
  // Length of the background shift used for mask synthesis.
  double shift = 8.0;
  int width = 8;   // channels at the first level, doubled per level
  int depth = 2;   // number of down/up levels
  std::uint64_t seed = 0;

  // 32x32 oracle preset: 1500 steps, batch 16, decay every 400, native size.
  static SegmenterConfig desk();

  void validate() const;
  [[nodiscard]] io::Json to_json() const;
  void merge_json(const io::Json& j);
};

struct MaskSample {
  Image image;                     // unshifted G(z, c)
  std::vector<std::uint8_t> mask;  // H*W, 1 = foreground
  std::optional<int> class_label;

  [[nodiscard]] double area() const;
};

// mask = [channel_mean(G(z + shift h_bg, c)) < theta]; one-channel images are
// treated as gray, so the channel mean is the pixel itself.
MaskSample synth_mask(const Generator& generator, std::span<const float> z, std::optional<int> c,
                      const Eigen::VectorXd& h_bg, double theta, double shift);

// Threshold of an already shifted image.
std::vector<std::uint8_t> threshold_mask(const Image& shifted, double theta);

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Per-class scores for an image.
using ClassScorer = std::function<std::vector<float>(const Image&)>;

// Counts how often each class is among an image's top_n scores (ties to the
// lower index) and keeps the ceil(fraction * num_classes) most frequent
// classes that appear at all, ordered by count then index.
std::vector<int> select_classes(const ClassScorer& classifier, const std::vector<Image>& dataset,
                                int num_classes, const SegmenterConfig& cfg);
std::vector<int> select_from_counts(std::span<const int> counts, double fraction);

// Class stub for class-conditional oracle data: remembers the label of each
// rendered image and scores it highest, the remaining classes in index order.
class OracleClassStub {
 public:
  explicit OracleClassStub(int num_classes) : num_classes_(num_classes) {}
  void remember(const Image& image, int label);
  [[nodiscard]] std::vector<float> operator()(const Image& image) const;

 private:
  int num_classes_;
  std::map<std::uint64_t, int> labels_;
};

struct ClassAcceptance {
  int attempted = 0;
  int accepted = 0;
};

struct SaliencyDataset {
  std::vector<MaskSample> samples;
  // Key -1 stands for "no class" (unconditional generators).
  std::map<int, ClassAcceptance> acceptance;

  [[nodiscard]] std::string acceptance_log() const;
};

// Draws z ~ N(0, I) and c uniformly from `classes` (empty for unconditional
// generators) until n samples pass the area filter. Throws InsufficientData
// when fewer than 1% of a window of 1000 consecutive draws is accepted.
SaliencyDataset build_saliency_dataset(const Generator& generator, const std::vector<int>& classes,
                                       const Eigen::VectorXd& h_bg, const SegmenterConfig& cfg, int n,
                                       std::uint64_t seed);

// Paired PNGs (image_i.png, mask_i.png) plus manifest.json with class labels
// and mask areas.
void save_saliency_dataset(const std::filesystem::path& dir, const SaliencyDataset& ds);
SaliencyDataset load_saliency_dataset(const std::filesystem::path& dir);

// U-shaped encoder-decoder with skip connections producing two logits per
// pixel; foreground probability is softmax(logits / temperature)[1].
class Segmenter {
 public:
  Segmenter(nn::Shape input, int width, int depth, double temperature, Rng& rng);

  [[nodiscard]] const nn::Shape& input_shape() const { return input_; }
  [[nodiscard]] double temperature() const { return temperature_; }
  [[nodiscard]] std::span<float> params() { return params_; }
  [[nodiscard]] std::span<const float> params() const { return params_; }

  struct Cache {
    std::vector<nn::Trace> enc;
    std::vector<nn::Trace> dec;
    std::vector<nn::Trace> up;
    nn::Trace head;
  };

  // 2 x H x W logits.
  std::vector<float> forward(std::span<const float> x, Cache* cache = nullptr) const;
  void backward(const Cache& cache, std::span<const float> glogits, std::span<float> gparams) const;

  // Per-pixel foreground probability of an image of any size: resized to the
  // segmenter input, predicted, and returned at the segmenter resolution.
  [[nodiscard]] std::vector<float> predict(const Image& image) const;

  void save(const std::filesystem::path& path) const;
  static Segmenter load(const std::filesystem::path& path);

 private:
  nn::Shape input_;
  int width_;
  int depth_;
  double temperature_;
  std::vector<nn::Sequential> enc_;  // enc_[0] full resolution, enc_[i] starts with a pool
  std::vector<nn::Sequential> up_;   // up_[i]: upsample of level i+1 output
  std::vector<nn::Sequential> dec_;  // dec_[i] consumes concat(up_[i], enc_[i])
  nn::Sequential head_;
  std::vector<std::size_t> offsets_;  // enc..., dec..., head
  std::vector<float> params_;
};

// Per-pixel temperature cross-entropy for planar 2-channel logits; writes the
// gradient (already divided by the pixel count) when non-empty. Returns the
// mean loss and the count of correctly classified pixels.
double pixel_cross_entropy(std::span<const float> logits, std::span<const std::uint8_t> mask, double temperature,
                           std::span<float> grad, int* correct = nullptr);

struct SegmenterStep {
  int step = 0;
  double loss = 0;
  double pixel_accuracy = 0;
  double lr = 0;
};

struct SegmenterResult {
  Segmenter model;
  std::vector<SegmenterStep> history;
  // Mean pixel accuracy over the last min(100, steps) steps.
  double final_pixel_accuracy = 0;
};

// Adam with lr * lr_decay^(floor(step / lr_decay_every)). Images and masks are
// rescaled to the configured short side first.
SegmenterResult train_segmenter(const std::vector<MaskSample>& dataset, const SegmenterConfig& cfg,
                                const std::function<void(const SegmenterStep&)>& on_step = {});

// Mean over samples of mean |U(x) - m|. Masks are rescaled like the inputs;
// throws ShapeMismatch if they do not match the segmenter output size.
double evaluate_mae(const Segmenter& model, const std::vector<MaskSample>& labeled);
// MAE of precomputed probability maps.
double mean_abs_error(std::span<const float> prob, std::span<const std::uint8_t> mask);

// Resizes the mask plane with bilinear weights and re-binarizes at 0.5.
std::vector<std::uint8_t> resize_mask(std::span<const std::uint8_t> mask, int height, int width, int new_height,
                                      int new_width);

}  // namespace latentdirs
