#include "latentdirs/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

#include "latentdirs/error.hpp"

namespace latentdirs {

SegmenterConfig SegmenterConfig::desk() {
  SegmenterConfig c;
  c.steps = 1500;
  c.batch = 16;
  c.lr_decay_every = 400;
  c.input_short_side = 0;
  return c;
}

void SegmenterConfig::validate() const {
  if (!(temperature > 0)) throw Error(ErrorKind::Validation, "temperature must be positive");
  if (steps < 0 || batch < 1 || lr_decay_every < 1) throw Error(ErrorKind::Validation, "bad segmenter schedule");
  if (!(lr > 0) || !(lr_decay > 0)) throw Error(ErrorKind::Validation, "learning rate and decay must be positive");
  if (input_short_side < 0) throw Error(ErrorKind::Validation, "input_short_side must be >= 0");
  if (!(area_min > 0 && area_min < area_max && area_max < 1)) {
    throw Error(ErrorKind::Validation, "need 0 < area_min < area_max < 1");
  }
  if (!(theta > 0 && theta < 1)) throw Error(ErrorKind::Validation, "need 0 < theta < 1");
  if (!(top_class_fraction > 0 && top_class_fraction <= 1)) throw Error(ErrorKind::Validation, "bad top_class_fraction");
  if (top_n_predictions < 1) throw Error(ErrorKind::Validation, "top_n_predictions must be positive");
  if (width < 1 || depth < 1) throw Error(ErrorKind::Validation, "segmenter width/depth must be positive");
}

io::Json SegmenterConfig::to_json() const {
  return {{"temperature", temperature},
          {"steps", steps},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"lr_decay_every", lr_decay_every},
          {"batch", batch},
          {"input_short_side", input_short_side},
          {"area_min", area_min},
          {"area_max", area_max},
          {"theta", theta},
          {"top_class_fraction", top_class_fraction},
          {"top_n_predictions", top_n_predictions},
          {"shift", shift},
          {"width", width},
          {"depth", depth},
          {"seed", seed}};
}

void SegmenterConfig::merge_json(const io::Json& j) {
  try {
    temperature = j.value("temperature", temperature);
    steps = j.value("steps", steps);
    lr = j.value("lr", lr);
    lr_decay = j.value("lr_decay", lr_decay);
    lr_decay_every = j.value("lr_decay_every", lr_decay_every);
    batch = j.value("batch", batch);
    input_short_side = j.value("input_short_side", input_short_side);
    area_min = j.value("area_min", area_min);
    area_max = j.value("area_max", area_max);
    theta = j.value("theta", theta);
    top_class_fraction = j.value("top_class_fraction", top_class_fraction);
    top_n_predictions = j.value("top_n_predictions", top_n_predictions);
    shift = j.value("shift", shift);
    width = j.value("width", width);
    depth = j.value("depth", depth);
    seed = j.value("seed", seed);
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed segmenter config: ") + e.what());
  }
}

double MaskSample::area() const {
  if (mask.empty()) return 0.0;
  const auto on = std::count(mask.begin(), mask.end(), std::uint8_t{1});
  return static_cast<double>(on) / static_cast<double>(mask.size());
}

std::vector<std::uint8_t> threshold_mask(const Image& shifted, double theta) {
  const auto mean = channel_mean(shifted);
  std::vector<std::uint8_t> mask(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) mask[i] = mean[i] < theta ? 1 : 0;
  return mask;
}

MaskSample synth_mask(const Generator& generator, std::span<const float> z, std::optional<int> c,
                      const Eigen::VectorXd& h_bg, double theta, double shift) {
  if (h_bg.size() != static_cast<Eigen::Index>(z.size())) throw Error(ErrorKind::ShapeMismatch, "h_bg length != latent dim");
  LatentCode moved(z.begin(), z.end());
  for (std::size_t j = 0; j < moved.size(); ++j) moved[j] = static_cast<float>(moved[j] + shift * h_bg[static_cast<Eigen::Index>(j)]);
  MaskSample s;
  s.image = generator.generate(z, c);
  s.mask = threshold_mask(generator.generate(moved, c), theta);
  s.class_label = c;
  return s;
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "mask sizes differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> select_from_counts(std::span<const int> counts, double fraction) {
  if (counts.empty()) throw Error(ErrorKind::InsufficientData, "no classes to select from");
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(counts.size()) - 1e-9));
  std::vector<int> order;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) order.push_back(static_cast<int>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  if (order.size() > keep) order.resize(std::max<std::size_t>(keep, 1));
  return order;
}

std::vector<int> select_classes(const ClassScorer& classifier, const std::vector<Image>& dataset, int num_classes,
                                const SegmenterConfig& cfg) {
  if (dataset.empty()) throw Error(ErrorKind::InsufficientData, "class selection needs a non-empty dataset");
  if (num_classes < 1) throw Error(ErrorKind::Validation, "num_classes must be positive");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& image : dataset) {
    const auto scores = classifier(image);
    if (static_cast<int>(scores.size()) != num_classes) {
      throw Error(ErrorKind::ShapeMismatch, "classifier returned " + std::to_string(scores.size()) + " scores");
    }
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    const int top = std::min(cfg.top_n_predictions, num_classes);
    for (int i = 0; i < top; ++i) ++counts[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  }
  return select_from_counts(counts, cfg.top_class_fraction);
}

void OracleClassStub::remember(const Image& image, int label) {
  if (label < 0 || label >= num_classes_) throw Error(ErrorKind::Index, "class label out of range");
  labels_[io::checksum(image.pixels)] = label;
}

std::vector<float> OracleClassStub::operator()(const Image& image) const {
  std::vector<float> scores(static_cast<std::size_t>(num_classes_));
  const auto it = labels_.find(io::checksum(image.pixels));
  if (it == labels_.end()) throw Error(ErrorKind::Unsupported, "class stub has not seen this image");
  for (int c = 0; c < num_classes_; ++c) scores[static_cast<std::size_t>(c)] = -static_cast<float>(c);
  scores[static_cast<std::size_t>(it->second)] = 1.0f;
  return scores;
}

std::string SaliencyDataset::acceptance_log() const {
  std::ostringstream out;
  for (const auto& [c, a] : acceptance) {
    out << "class " << (c < 0 ? std::string("none") : std::to_string(c)) << ": accepted " << a.accepted << "/"
        << a.attempted;
    if (a.attempted > 0) out << " (" << (100.0 * a.accepted / a.attempted) << "%)";
    out << '\n';
  }
  return out.str();
}

SaliencyDataset build_saliency_dataset(const Generator& generator, const std::vector<int>& classes,
                                       const Eigen::VectorXd& h_bg, const SegmenterConfig& cfg, int n,
                                       std::uint64_t seed) {
  cfg.validate();
  if (n < 0) throw Error(ErrorKind::Validation, "sample count must be >= 0");
  if (generator.class_conditional() && classes.empty()) {
    throw Error(ErrorKind::InsufficientData, "class-conditional generator needs a non-empty class set");
  }
  if (!generator.class_conditional() && !classes.empty()) {
    throw Error(ErrorKind::Validation, "unconditional generator takes no classes");
  }
  constexpr int kWindow = 1000;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SaliencyDataset ds;
  std::deque<char> window;
  int window_accepted = 0;
  while (static_cast<int>(ds.samples.size()) < n) {
    const auto need = static_cast<std::size_t>(n - static_cast<int>(ds.samples.size()));
    const std::size_t chunk = std::max<std::size_t>(need, 16);
    std::vector<LatentCode> zs(chunk, LatentCode(static_cast<std::size_t>(generator.latent_dim())));
    std::vector<std::optional<int>> cs(chunk);
    for (std::size_t i = 0; i < chunk; ++i) {
      for (auto& v : zs[i]) v = static_cast<float>(normal(rng));
      if (!classes.empty()) {
        cs[i] = classes[std::uniform_int_distribution<std::size_t>(0, classes.size() - 1)(rng)];
      }
    }
    std::vector<MaskSample> cand(chunk);
    nn::parallel_for(chunk, [&](std::size_t i) { cand[i] = synth_mask(generator, zs[i], cs[i], h_bg, cfg.theta, cfg.shift); });
    for (std::size_t i = 0; i < chunk && static_cast<int>(ds.samples.size()) < n; ++i) {
      const double area = cand[i].area();
      const bool ok = area >= cfg.area_min && area <= cfg.area_max;
      auto& log = ds.acceptance[cs[i] ? *cs[i] : -1];
      ++log.attempted;
      window.push_back(ok ? 1 : 0);
      window_accepted += ok ? 1 : 0;
      if (static_cast<int>(window.size()) > kWindow) {
        window_accepted -= window.front();
        window.pop_front();
      }
      if (ok) {
        ++log.accepted;
        ds.samples.push_back(std::move(cand[i]));
      }
      if (static_cast<int>(window.size()) == kWindow && window_accepted * 100 < kWindow) {
        throw Error(ErrorKind::InsufficientData,
                    "mask rejection rate above 99% over the last " + std::to_string(kWindow) + " draws\n" +
                        ds.acceptance_log());
      }
    }
  }
  return ds;
}

void save_saliency_dataset(const std::filesystem::path& dir, const SaliencyDataset& ds) {
  std::filesystem::create_directories(dir);
  io::Json items = io::Json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string image_name = "image_" + std::to_string(i) + ".png";
    const std::string mask_name = "mask_" + std::to_string(i) + ".png";
    write_png(dir / image_name, s.image);
    Image m(ImageShape{1, s.image.shape.height, s.image.shape.width});
    for (std::size_t p = 0; p < s.mask.size(); ++p) m.pixels[p] = s.mask[p] ? 1.0f : 0.0f;
    write_png(dir / mask_name, m);
    items.push_back({{"image", image_name},
                     {"mask", mask_name},
                     {"class", s.class_label ? io::Json(*s.class_label) : io::Json(nullptr)},
                     {"area", s.area()}});
  }
  io::Json acc = io::Json::object();
  for (const auto& [c, a] : ds.acceptance) {
    acc[c < 0 ? "none" : std::to_string(c)] = {{"attempted", a.attempted}, {"accepted", a.accepted}};
  }
  io::write_json(dir / "manifest.json", {{"samples", items}, {"acceptance", acc}});
}

SaliencyDataset load_saliency_dataset(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  SaliencyDataset ds;
  try {
    for (const auto& item : manifest.at("samples")) {
      MaskSample s;
      s.image = read_png(dir / item.at("image").get<std::string>());
      const Image m = read_png(dir / item.at("mask").get<std::string>());
      s.mask.resize(m.pixels.size());
      for (std::size_t p = 0; p < m.pixels.size(); ++p) s.mask[p] = m.pixels[p] >= 0.5f ? 1 : 0;
      if (!item.at("class").is_null()) s.class_label = item.at("class").get<int>();
      ds.samples.push_back(std::move(s));
    }
    if (manifest.contains("acceptance")) {
      for (const auto& [key, v] : manifest.at("acceptance").items()) {
        ds.acceptance[key == "none" ? -1 : std::stoi(key)] = {v.at("attempted").get<int>(), v.at("accepted").get<int>()};
      }
    }
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed saliency manifest: ") + e.what());
  }
  return ds;
}

namespace {

int level_channels(int width, int level) { return width << level; }

nn::Shape level_shape(nn::Shape input, int width, int level) {
  return {level_channels(width, level), input.h >> level, input.w >> level};
}

void append_conv_block(nn::Sequential& s, int out_c) {
  s.add<nn::Conv2d>(out_c, 3, 1).add<nn::ReLU>().add<nn::Conv2d>(out_c, 3, 1).add<nn::ReLU>();
}

}  // namespace

Segmenter::Segmenter(nn::Shape input, int width, int depth, double temperature, Rng& rng)
    : input_(input), width_(width), depth_(depth), temperature_(temperature), head_(nn::Shape{width, input.h, input.w}) {
  if (width < 1 || depth < 1) throw Error(ErrorKind::Validation, "segmenter width/depth must be positive");
  const int stride = 1 << depth;
  if (input.h % stride != 0 || input.w % stride != 0) {
    throw Error(ErrorKind::ShapeMismatch, "segmenter input " + nn::to_string(input) + " not divisible by " +
                                              std::to_string(stride));
  }
  for (int l = 0; l <= depth; ++l) {
    if (l == 0) {
      enc_.emplace_back(input);
    } else {
      enc_.emplace_back(level_shape(input, width, l - 1));
      enc_.back().add<nn::MaxPool2>();
    }
    append_conv_block(enc_.back(), level_channels(width, l));
  }
  for (int l = 0; l < depth; ++l) {
    up_.emplace_back(level_shape(input, width, l + 1));
    up_.back().add<nn::Upsample2>();
    const auto here = level_shape(input, width, l);
    dec_.emplace_back(nn::Shape{level_channels(width, l + 1) + here.c, here.h, here.w});
    append_conv_block(dec_.back(), here.c);
  }
  head_.add<nn::Conv2d>(2, 1, 0);

  std::size_t total = 0;
  for (const auto& s : enc_) {
    offsets_.push_back(total);
    total += s.param_count();
  }
  for (const auto& s : dec_) {
    offsets_.push_back(total);
    total += s.param_count();
  }
  offsets_.push_back(total);
  total += head_.param_count();
  params_.assign(total, 0.0f);
  std::span<float> p(params_);
  for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].init(p.subspan(offsets_[i], enc_[i].param_count()), rng);
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    dec_[i].init(p.subspan(offsets_[enc_.size() + i], dec_[i].param_count()), rng);
  }
  head_.init(p.subspan(offsets_.back(), head_.param_count()), rng);
}

std::vector<float> Segmenter::forward(std::span<const float> x, Cache* cache) const {
  if (x.size() != input_.size()) throw Error(ErrorKind::ShapeMismatch, "segmenter input size mismatch");
  Cache local;
  Cache& c = cache ? *cache : local;
  const std::span<const float> p(params_);
  const auto d = static_cast<std::size_t>(depth_);
  c.enc.assign(d + 1, {});
  c.dec.assign(d, {});
  c.up.assign(d, {});
  for (std::size_t l = 0; l <= d; ++l) {
    const std::span<const float> in = l == 0 ? x : c.enc[l - 1].output();
    enc_[l].forward(p.subspan(offsets_[l], enc_[l].param_count()), in, c.enc[l]);
  }
  for (std::size_t l = d; l-- > 0;) {
    const std::span<const float> below = l + 1 == d ? c.enc[d].output() : c.dec[l + 1].output();
    up_[l].forward({}, below, c.up[l]);
    std::vector<float> cat(c.up[l].output().begin(), c.up[l].output().end());
    cat.insert(cat.end(), c.enc[l].output().begin(), c.enc[l].output().end());
    dec_[l].forward(p.subspan(offsets_[d + 1 + l], dec_[l].param_count()), cat, c.dec[l]);
  }
  head_.forward(p.subspan(offsets_.back(), head_.param_count()), c.dec[0].output(), c.head);
  const auto out = c.head.output();
  return {out.begin(), out.end()};
}

void Segmenter::backward(const Cache& c, std::span<const float> glogits, std::span<float> gparams) const {
  const std::span<const float> p(params_);
  const auto d = static_cast<std::size_t>(depth_);
  // Gradient w.r.t. each encoder output (skip path plus the path below).
  std::vector<std::vector<float>> genc(d + 1);
  for (std::size_t l = 0; l <= d; ++l) genc[l].assign(enc_[l].output_shape().size(), 0.0f);

  std::vector<float> gdec(dec_[0].output_shape().size());
  head_.backward(p.subspan(offsets_.back(), head_.param_count()), c.head, glogits,
                 gparams.subspan(offsets_.back(), head_.param_count()), gdec);
  for (std::size_t l = 0; l < d; ++l) {
    std::vector<float> gcat(dec_[l].input_shape().size());
    dec_[l].backward(p.subspan(offsets_[d + 1 + l], dec_[l].param_count()), c.dec[l], gdec,
                     gparams.subspan(offsets_[d + 1 + l], dec_[l].param_count()), gcat);
    const std::size_t up_size = up_[l].output_shape().size();
    for (std::size_t i = up_size; i < gcat.size(); ++i) genc[l][i - up_size] += gcat[i];
    std::vector<float> gbelow(up_[l].input_shape().size());
    up_[l].backward({}, c.up[l], std::span<const float>(gcat).first(up_size), {}, gbelow);
    if (l + 1 == d) {
      for (std::size_t i = 0; i < gbelow.size(); ++i) genc[d][i] += gbelow[i];
    } else {
      gdec = std::move(gbelow);
    }
  }
  for (std::size_t l = d + 1; l-- > 0;) {
    std::vector<float> gin;
    if (l > 0) gin.assign(enc_[l].input_shape().size(), 0.0f);
    enc_[l].backward(p.subspan(offsets_[l], enc_[l].param_count()), c.enc[l], genc[l],
                     gparams.subspan(offsets_[l], enc_[l].param_count()), gin);
    if (l > 0) {
      for (std::size_t i = 0; i < gin.size(); ++i) genc[l - 1][i] += gin[i];
    }
  }
}

namespace {

float foreground_probability(float l0, float l1, double temperature) {
  return static_cast<float>(1.0 / (1.0 + std::exp(-(static_cast<double>(l1) - l0) / temperature)));
}

}  // namespace

std::vector<float> Segmenter::predict(const Image& image) const {
  Image in = image;
  if (image.shape.height != input_.h || image.shape.width != input_.w) {
    in = resize_short_side(image, std::min(input_.h, input_.w));
  }
  if (in.shape.channels != input_.c || in.shape.height != input_.h || in.shape.width != input_.w) {
    throw Error(ErrorKind::ShapeMismatch, "image does not match segmenter input " + nn::to_string(input_));
  }
  const auto logits = forward(in.pixels);
  const std::size_t plane = static_cast<std::size_t>(input_.h) * input_.w;
  std::vector<float> prob(plane);
  for (std::size_t i = 0; i < plane; ++i) prob[i] = foreground_probability(logits[i], logits[plane + i], temperature_);
  return prob;
}

void Segmenter::save(const std::filesystem::path& path) const {
  io::save_params(path, params_,
                  {{"architecture", "unet"},
                   {"input_channels", input_.c},
                   {"height", input_.h},
                   {"width", input_.w},
                   {"base_width", width_},
                   {"depth", depth_},
                   {"temperature", temperature_}});
}

Segmenter Segmenter::load(const std::filesystem::path& path) {
  io::Json meta;
  auto params = io::load_params(path, &meta);
  nn::Shape input;
  int width = 0;
  int depth = 0;
  double temperature = 0;
  try {
    input = {meta.at("input_channels").get<int>(), meta.at("height").get<int>(), meta.at("width").get<int>()};
    width = meta.at("base_width").get<int>();
    depth = meta.at("depth").get<int>();
    temperature = meta.at("temperature").get<double>();
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed segmenter metadata: ") + e.what());
  }
  Rng rng(0);
  Segmenter s(input, width, depth, temperature, rng);
  if (params.size() != s.params_.size()) throw Error(ErrorKind::ShapeMismatch, "segmenter checkpoint size mismatch");
  s.params_ = std::move(params);
  return s;
}

double pixel_cross_entropy(std::span<const float> logits, std::span<const std::uint8_t> mask, double temperature,
                           std::span<float> grad, int* correct) {
  const std::size_t n = mask.size();
  if (logits.size() != 2 * n) throw Error(ErrorKind::ShapeMismatch, "logits must be 2 x mask size");
  double loss = 0;
  int hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = (static_cast<double>(logits[n + i]) - logits[i]) / temperature;
    if (!std::isfinite(a)) throw Error(ErrorKind::NonFinite, "non-finite segmenter logits");
    const double y = mask[i] ? 1.0 : 0.0;
    // -log sigmoid(+-a), computed stably.
    const double s = y > 0 ? -a : a;
    loss += s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    const double p1 = 1.0 / (1.0 + std::exp(-a));
    hits += ((p1 >= 0.5) == (y > 0)) ? 1 : 0;
    if (!grad.empty()) {
      const double g = (p1 - y) / (temperature * static_cast<double>(n));
      grad[n + i] = static_cast<float>(g);
      grad[i] = static_cast<float>(-g);
    }
  }
  if (correct) *correct = hits;
  return loss / static_cast<double>(n);
}

std::vector<std::uint8_t> resize_mask(std::span<const std::uint8_t> mask, int height, int width, int new_height,
                                      int new_width) {
  if (height == new_height && width == new_width) return {mask.begin(), mask.end()};
  std::vector<float> plane(mask.begin(), mask.end());
  const auto r = resize_plane(plane, height, width, new_height, new_width);
  std::vector<std::uint8_t> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = r[i] >= 0.5f ? 1 : 0;
  return out;
}

namespace {

MaskSample rescaled(const MaskSample& s, int short_side) {
  if (s.mask.size() != static_cast<std::size_t>(s.image.shape.height) * s.image.shape.width) {
    throw Error(ErrorKind::ShapeMismatch, "mask does not match its image");
  }
  if (short_side == 0) return s;
  MaskSample out;
  out.image = resize_short_side(s.image, short_side);
  out.mask = resize_mask(s.mask, s.image.shape.height, s.image.shape.width, out.image.shape.height,
                         out.image.shape.width);
  out.class_label = s.class_label;
  return out;
}

}  // namespace

SegmenterResult train_segmenter(const std::vector<MaskSample>& dataset, const SegmenterConfig& cfg,
                                const std::function<void(const SegmenterStep&)>& on_step) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorKind::InsufficientData, "segmenter needs a non-empty dataset");
  std::vector<MaskSample> data;
  data.reserve(dataset.size());
  for (const auto& s : dataset) data.push_back(rescaled(s, cfg.input_short_side));
  const auto shape = data.front().image.shape;
  for (const auto& s : data) {
    if (!(s.image.shape == shape)) throw Error(ErrorKind::ShapeMismatch, "segmenter dataset images differ in size");
  }
  Rng rng(cfg.seed);
  SegmenterResult res{Segmenter({shape.channels, shape.height, shape.width}, cfg.width, cfg.depth, cfg.temperature, rng),
                      {},
                      0.0};
  Segmenter& model = res.model;
  nn::Adam adam(nn::AdamOptions{cfg.lr});
  const std::size_t np = model.params().size();
  const auto batch = static_cast<std::size_t>(cfg.batch);
  std::vector<std::vector<float>> grads(batch);
  std::vector<double> losses(batch);
  std::vector<int> hits(batch);
  std::vector<float> total(np);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::size_t> picked(batch);
  const std::size_t pixels = data.front().mask.size();
  std::deque<double> window;
  double window_sum = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, step / cfg.lr_decay_every);
    adam.set_learning_rate(lr);
    for (auto& p : picked) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      p = order[cursor++];
    }
    nn::parallel_for(batch, [&](std::size_t i) {
      const auto& s = data[picked[i]];
      Segmenter::Cache cache;
      const auto logits = model.forward(s.image.pixels, &cache);
      std::vector<float> glogits(logits.size());
      losses[i] = pixel_cross_entropy(logits, s.mask, cfg.temperature, glogits, &hits[i]);
      for (auto& g : glogits) g /= static_cast<float>(batch);
      grads[i].assign(np, 0.0f);
      model.backward(cache, glogits, grads[i]);
    });
    std::fill(total.begin(), total.end(), 0.0f);
    SegmenterStep rec;
    rec.step = step + 1;
    rec.lr = lr;
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t p = 0; p < np; ++p) total[p] += grads[i][p];
      rec.loss += losses[i];
      rec.pixel_accuracy += static_cast<double>(hits[i]);
    }
    rec.loss /= static_cast<double>(batch);
    rec.pixel_accuracy /= static_cast<double>(batch * pixels);
    if (!std::isfinite(rec.loss)) {
      throw Error(ErrorKind::NonFinite, "non-finite segmenter loss at step " + std::to_string(rec.step));
    }
    const nn::ParamSlot slots[] = {{model.params(), total}};
    adam.step(slots);
    window.push_back(rec.pixel_accuracy);
    window_sum += rec.pixel_accuracy;
    if (window.size() > 100) {
      window_sum -= window.front();
      window.pop_front();
    }
    res.final_pixel_accuracy = window_sum / static_cast<double>(window.size());
    res.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  return res;
}

double mean_abs_error(std::span<const float> prob, std::span<const std::uint8_t> mask) {
  if (prob.size() != mask.size() || prob.empty()) throw Error(ErrorKind::ShapeMismatch, "prediction/mask size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) s += std::abs(static_cast<double>(prob[i]) - (mask[i] ? 1.0 : 0.0));
  return s / static_cast<double>(prob.size());
}

double evaluate_mae(const Segmenter& model, const std::vector<MaskSample>& labeled) {
  if (labeled.empty()) throw Error(ErrorKind::InsufficientData, "MAE needs at least one sample");
  const auto in = model.input_shape();
  std::vector<double> per(labeled.size());
  nn::parallel_for(labeled.size(), [&](std::size_t i) {
    const auto& s = labeled[i];
    const auto mask = resize_mask(s.mask, s.image.shape.height, s.image.shape.width, in.h, in.w);
    const auto prob = model.predict(s.image);
    per[i] = mean_abs_error(prob, mask);
  });
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

}  // namespace latentdirs
