#include "latentdirs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "latentdirs/error.hpp"

namespace latentdirs {

double evaluate_rca(const Generator& generator, const DirectionMatrix& fixed, const TrainConfig& cfg,
                    int eval_samples) {
  TrainConfig frozen = cfg;
  frozen.train_directions = false;
  frozen.num_directions = fixed.num_directions();
  const auto res = train(generator, frozen, fixed);
  return evaluate_reconstructor(generator, fixed.effective(), res.reconstructor, frozen, eval_samples,
                                cfg.seed ^ 0x5ca1ab1eULL)
      .accuracy;
}

void DvnConfig::validate() const {
  if (!(shift_length > 0) || dataset_size < 1 || classifier_steps < 1 || classifier_batch < 1 ||
      !(classifier_lr > 0)) {
    throw Error(ErrorKind::Validation, "DVN config values must be positive");
  }
}

io::Json DvnConfig::to_json() const {
  return {{"shift_length", shift_length},     {"dataset_size", dataset_size},
          {"classifier_steps", classifier_steps}, {"classifier_batch", classifier_batch},
          {"classifier_lr", classifier_lr},   {"seed", seed}};
}

void DvnConfig::merge_json(const io::Json& j) {
  try {
    shift_length = j.value("shift_length", shift_length);
    dataset_size = j.value("dataset_size", dataset_size);
    classifier_steps = j.value("classifier_steps", classifier_steps);
    classifier_batch = j.value("classifier_batch", classifier_batch);
    classifier_lr = j.value("classifier_lr", classifier_lr);
    seed = j.value("seed", seed);
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed DVN config: ") + e.what());
  }
}

ShiftDataset build_shift_dataset(const Generator& generator, const Eigen::VectorXd& h, const DvnConfig& cfg,
                                 Rng& rng) {
  const auto n = static_cast<std::size_t>(cfg.dataset_size);
  const auto zs = sample_latent(n, generator.latent_dim(), rng);
  ShiftDataset ds;
  ds.labels.resize(n);
  std::vector<std::optional<int>> classes(n);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = coin(rng) ? 1 : 0;
    if (generator.class_conditional()) {
      classes[i] = std::uniform_int_distribution<int>(0, generator.num_classes() - 1)(rng);
    }
  }
  ds.images.resize(n);
  nn::parallel_for(n, [&](std::size_t i) {
    LatentCode z = zs[i];
    const double s = ds.labels[i] == 1 ? cfg.shift_length : -cfg.shift_length;
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = static_cast<float>(z[j] + s * h[static_cast<Eigen::Index>(j)]);
    ds.images[i] = generator.generate(z, classes[i]);
  });
  return ds;
}

namespace {

ConvNet train_binary_classifier(const std::vector<Image>& images, const std::vector<int>& labels,
                                const DvnConfig& cfg, Rng& rng) {
  NetConfig nc;
  const auto shape = images.front().shape;
  nc.input = {shape.channels, shape.height, shape.width};
  nc.num_classes = 2;
  nc.regression_head = false;
  ConvNet net(nc, rng);
  nn::Adam adam(nn::AdamOptions{cfg.classifier_lr});
  const std::size_t np = net.param_count();
  const auto batch = static_cast<std::size_t>(cfg.classifier_batch);
  std::vector<std::vector<float>> grads(batch);
  std::vector<float> total(np);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::size_t> picked(batch);
  for (int step = 0; step < cfg.classifier_steps; ++step) {
    for (auto& p : picked) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      p = order[cursor++];
    }
    const float inv_b = 1.0f / static_cast<float>(batch);
    nn::parallel_for(batch, [&](std::size_t i) {
      auto& g = grads[i];
      g.assign(np, 0.0f);
      ConvNet::Cache cache;
      const auto out = net.forward(images[picked[i]].pixels, &cache);
      std::vector<float> glogits(2);
      nn::softmax_cross_entropy(out.logits, labels[picked[i]], 1.0, glogits);
      for (auto& v : glogits) v *= inv_b;
      net.backward(cache, glogits, 0.0f, g);
    });
    std::fill(total.begin(), total.end(), 0.0f);
    for (const auto& g : grads) {
      for (std::size_t p = 0; p < np; ++p) total[p] += g[p];
    }
    const nn::ParamSlot slots[] = {{net.params(), total}};
    adam.step(slots);
  }
  return net;
}

std::vector<int> predict_all(const ConvNet& net, const std::vector<Image>& images, std::size_t n) {
  std::vector<int> out(n);
  nn::parallel_for(n, [&](std::size_t i) { out[i] = net.forward(images[i].pixels).predicted(); });
  return out;
}

}  // namespace

double evaluate_dvn(const Generator& generator, const Eigen::VectorXd& h, const std::vector<Image>& real_images,
                    const DvnConfig& cfg) {
  cfg.validate();
  if (h.size() != generator.latent_dim()) throw Error(ErrorKind::ShapeMismatch, "direction length != latent dim");
  const double norm = h.norm();
  if (!(norm > 0) || !std::isfinite(norm)) throw Error(ErrorKind::DegenerateColumn, "DVN direction has zero norm");
  const auto n = static_cast<std::size_t>(cfg.dataset_size);
  if (real_images.size() < n) {
    throw Error(ErrorKind::InsufficientData, "DVN needs " + std::to_string(n) + " real images, got " +
                                                 std::to_string(real_images.size()));
  }
  const Eigen::VectorXd unit = h / norm;
  Rng rng(cfg.seed);

  const auto train_set = build_shift_dataset(generator, unit, cfg, rng);
  const ConvNet labeller = train_binary_classifier(train_set.images, train_set.labels, cfg, rng);

  std::vector<Image> real(real_images.begin(), real_images.begin() + static_cast<std::ptrdiff_t>(n));
  const auto pseudo = predict_all(labeller, real, n);
  const ConvNet transfer = train_binary_classifier(real, pseudo, cfg, rng);

  const auto test_set = build_shift_dataset(generator, unit, cfg, rng);
  const auto pred = predict_all(transfer, test_set.images, n);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += pred[i] == test_set.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(n);
}

DvnRanking rank_values(std::vector<double> dvn, int top_n) {
  if (dvn.empty()) throw Error(ErrorKind::InsufficientData, "no DVN values to rank");
  if (top_n < 1) throw Error(ErrorKind::Validation, "top_n must be positive");
  DvnRanking r;
  r.per_direction = std::move(dvn);
  r.order.resize(r.per_direction.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return r.per_direction[static_cast<std::size_t>(a)] > r.per_direction[static_cast<std::size_t>(b)]; });
  r.mean = std::accumulate(r.per_direction.begin(), r.per_direction.end(), 0.0) /
           static_cast<double>(r.per_direction.size());
  const std::size_t top = std::min(r.per_direction.size(), static_cast<std::size_t>(top_n));
  for (std::size_t i = 0; i < top; ++i) r.top += r.per_direction[static_cast<std::size_t>(r.order[i])];
  r.top /= static_cast<double>(top);
  return r;
}

DvnRanking dvn_rank(const Generator& generator, const DirectionMatrix& directions,
                    const std::vector<Image>& real_images, const DvnConfig& cfg, int top_n) {
  const Eigen::MatrixXd eff = directions.effective();
  std::vector<double> values(static_cast<std::size_t>(eff.cols()));
  for (Eigen::Index k = 0; k < eff.cols(); ++k) {
    DvnConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    values[static_cast<std::size_t>(k)] = evaluate_dvn(generator, eff.col(k), real_images, c);
  }
  return rank_values(std::move(values), top_n);
}

std::string to_string(Category c) {
  switch (c) {
    case Category::Geometry: return "geometry";
    case Category::Coloring: return "coloring";
    case Category::Textural: return "textural";
    case Category::None: return "none";
  }
  return "none";
}

Category parse_category(const std::string& s) {
  if (s == "geometry") return Category::Geometry;
  if (s == "coloring") return Category::Coloring;
  if (s == "textural") return Category::Textural;
  if (s == "none" || s.empty()) return Category::None;
  throw Error(ErrorKind::Validation, "unknown category '" + s + "'");
}

void AnnotationRecord::validate() const {
  if (assessor_id.empty()) throw Error(ErrorKind::Validation, "annotation needs an assessor id");
  if (direction_index < 0) throw Error(ErrorKind::Index, "negative direction index");
  if (category != Category::None && !mark()) {
    throw Error(ErrorKind::Validation, "category requires consistent and single_factor");
  }
}

io::Json AnnotationRecord::to_json() const {
  return {{"assessor_id", assessor_id},   {"direction_index", direction_index},
          {"consistent", consistent},     {"single_factor", single_factor},
          {"category", to_string(category)}, {"z_set_id", z_set_id}};
}

AnnotationRecord AnnotationRecord::from_json(const io::Json& j) {
  AnnotationRecord r;
  try {
    r.assessor_id = j.at("assessor_id").get<std::string>();
    r.direction_index = j.at("direction_index").get<int>();
    r.consistent = j.at("consistent").get<bool>();
    r.single_factor = j.at("single_factor").get<bool>();
    r.category = parse_category(j.value("category", std::string("none")));
    r.z_set_id = j.value("z_set_id", std::string());
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed annotation: ") + e.what());
  }
  r.validate();
  return r;
}

MosResult mos_aggregate(const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw Error(ErrorKind::InsufficientData, "no annotation records");
  MosResult res;
  int marked = 0;
  int counts[3] = {0, 0, 0};
  for (const auto& r : records) {
    r.validate();
    if (!r.mark()) continue;
    ++marked;
    if (r.category != Category::None) ++counts[static_cast<int>(r.category)];
  }
  res.mos = static_cast<double>(marked) / static_cast<double>(records.size());
  if (marked > 0) {
    res.rates.geometry = static_cast<double>(counts[0]) / marked;
    res.rates.coloring = static_cast<double>(counts[1]) / marked;
    res.rates.textural = static_cast<double>(counts[2]) / marked;
  }
  return res;
}

std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weights) {
  // Shortest augmenting path Hungarian method on cost = -weight, 1-based.
  const auto n = static_cast<int>(weights.rows());
  const auto m = static_cast<int>(weights.cols());
  if (n > m) throw Error(ErrorKind::ShapeMismatch, "assignment needs rows <= cols");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1), v(static_cast<std::size_t>(m) + 1);
  std::vector<int> p(static_cast<std::size_t>(m) + 1), way(static_cast<std::size_t>(m) + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = -weights(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return assignment;
}

RecoveryScore direction_recovery_score(const Eigen::MatrixXd& learned, const Eigen::MatrixXd& ground_truth) {
  if (learned.rows() != ground_truth.rows()) throw Error(ErrorKind::ShapeMismatch, "latent dims differ");
  if (ground_truth.cols() > learned.cols()) throw Error(ErrorKind::ShapeMismatch, "need m <= K");
  if (ground_truth.cols() == 0) throw Error(ErrorKind::ShapeMismatch, "no ground-truth directions");
  auto normalized = [](const Eigen::MatrixXd& a) {
    Eigen::MatrixXd out = a;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double n = a.col(j).norm();
      if (!(n > 1e-12)) throw Error(ErrorKind::DegenerateColumn, "zero column in recovery score");
      out.col(j) /= n;
    }
    return out;
  };
  const Eigen::MatrixXd cos = (normalized(ground_truth).transpose() * normalized(learned)).cwiseAbs();
  RecoveryScore s;
  s.assignment = max_weight_assignment(cos);
  for (Eigen::Index i = 0; i < cos.rows(); ++i) s.mean_abs_cosine += cos(i, s.assignment[static_cast<std::size_t>(i)]);
  s.mean_abs_cosine /= static_cast<double>(cos.rows());
  return s;
}

RecoveryScore direction_recovery_score(const DirectionMatrix& learned, const Eigen::MatrixXd& ground_truth) {
  return direction_recovery_score(learned.effective(), ground_truth);
}

void MetricsReport::validate() const {
  auto unit = [](std::optional<double> v, const char* what) {
    if (v && !(*v >= 0.0 && *v <= 1.0)) throw Error(ErrorKind::Validation, std::string(what) + " outside [0, 1]");
  };
  unit(rca, "rca");
  unit(rca_random, "rca_random");
  unit(rca_coordinate, "rca_coordinate");
  unit(mos, "mos");
  unit(dvn_mean, "dvn_mean");
  unit(dvn_top, "dvn_top");
  unit(recovery, "recovery");
  for (double v : dvn_per_direction) unit(v, "dvn");
  if (category_rates) {
    const auto& r = *category_rates;
    unit(r.geometry, "geometry rate");
    unit(r.coloring, "coloring rate");
    unit(r.textural, "textural rate");
    if (r.geometry + r.coloring + r.textural > 1.0 + 1e-9) throw Error(ErrorKind::Validation, "category rates sum above 1");
  }
}

io::Json MetricsReport::to_json() const {
  io::Json j = io::Json::object();
  auto put = [&](const char* key, std::optional<double> v) { j[key] = v ? io::Json(*v) : io::Json(nullptr); };
  put("rca", rca);
  put("rca_random", rca_random);
  put("rca_coordinate", rca_coordinate);
  put("mos", mos);
  j["dvn_per_direction"] = dvn_per_direction;
  put("dvn_mean", dvn_mean);
  put("dvn_top", dvn_top);
  if (category_rates) {
    j["category_rates"] = {{"geometry", category_rates->geometry},
                           {"coloring", category_rates->coloring},
                           {"textural", category_rates->textural}};
  } else {
    j["category_rates"] = nullptr;
  }
  put("recovery", recovery);
  return j;
}

MetricsReport MetricsReport::from_json(const io::Json& j) {
  MetricsReport r;
  auto get = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  try {
    r.rca = get("rca");
    r.rca_random = get("rca_random");
    r.rca_coordinate = get("rca_coordinate");
    r.mos = get("mos");
    if (j.contains("dvn_per_direction")) r.dvn_per_direction = j.at("dvn_per_direction").get<std::vector<double>>();
    r.dvn_mean = get("dvn_mean");
    r.dvn_top = get("dvn_top");
    if (j.contains("category_rates") && !j.at("category_rates").is_null()) {
      const auto& c = j.at("category_rates");
      r.category_rates = CategoryRates{c.at("geometry").get<double>(), c.at("coloring").get<double>(),
                                       c.at("textural").get<double>()};
    }
    r.recovery = get("recovery");
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed metrics report: ") + e.what());
  }
  r.validate();
  return r;
}

}  // namespace latentdirs
