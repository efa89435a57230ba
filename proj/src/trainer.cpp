#include "latentdirs/trainer.hpp"

#include <cmath>
#include <deque>
#include <sstream>

#include "latentdirs/error.hpp"

namespace latentdirs {

void TrainConfig::validate() const {
  if (num_directions < 1) throw Error(ErrorKind::Validation, "K must be positive");
  if (!(lambda >= 0)) throw Error(ErrorKind::Validation, "lambda must be >= 0");
  if (!(epsilon_min > 0 && epsilon_min < epsilon_max)) {
    throw Error(ErrorKind::Validation, "need 0 < epsilon_min < epsilon_max");
  }
  if (!(learning_rate > 0)) throw Error(ErrorKind::Validation, "learning rate must be positive");
  if (steps < 0) throw Error(ErrorKind::Validation, "steps must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::Validation, "batch size must be positive");
  if (checkpoint_every < 0) throw Error(ErrorKind::Validation, "checkpoint interval must be >= 0");
  if (running_window < 1) throw Error(ErrorKind::Validation, "running window must be positive");
}

io::Json TrainConfig::to_json() const {
  return {{"K", num_directions},
          {"lambda", lambda},
          {"epsilon_max", epsilon_max},
          {"epsilon_min", epsilon_min},
          {"learning_rate", learning_rate},
          {"steps", steps},
          {"batch_size", batch_size},
          {"a_mode", std::string(to_string(a_mode))},
          {"seed", seed},
          {"train_directions", train_directions},
          {"checkpoint_every", checkpoint_every},
          {"architecture", architecture},
          {"running_window", running_window}};
}

void TrainConfig::merge_json(const io::Json& j) {
  try {
    num_directions = j.value("K", num_directions);
    lambda = j.value("lambda", lambda);
    epsilon_max = j.value("epsilon_max", epsilon_max);
    epsilon_min = j.value("epsilon_min", epsilon_min);
    learning_rate = j.value("learning_rate", learning_rate);
    steps = j.value("steps", steps);
    batch_size = j.value("batch_size", batch_size);
    if (j.contains("a_mode")) a_mode = parse_direction_mode(j.at("a_mode").get<std::string>());
    seed = j.value("seed", seed);
    train_directions = j.value("train_directions", train_directions);
    checkpoint_every = j.value("checkpoint_every", checkpoint_every);
    architecture = j.value("architecture", architecture);
    running_window = j.value("running_window", running_window);
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed train config: ") + e.what());
  }
}

double clamp_epsilon(double epsilon, double epsilon_min) {
  const double mag = std::max(std::abs(epsilon), epsilon_min);
  return epsilon < 0 ? -mag : mag;
}

LossTerms reconstruction_loss(const NetOutput& out, int k, double epsilon, double lambda) {
  if (!std::isfinite(out.epsilon_hat)) throw Error(ErrorKind::NonFinite, "non-finite shift prediction");
  LossTerms t;
  try {
    t.classification = nn::softmax_cross_entropy(out.logits, k, 1.0);
  } catch (const std::domain_error& e) {
    throw Error(ErrorKind::NonFinite, e.what());
  }
  t.regression = std::abs(epsilon - static_cast<double>(out.epsilon_hat));
  t.total = t.classification + lambda * t.regression;
  return t;
}

std::vector<TrainingSample> sample_training_batch(Rng& rng, const TrainConfig& cfg,
                                                  const Eigen::MatrixXd& directions,
                                                  const Generator& generator) {
  const int k_count = static_cast<int>(directions.cols());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick_k(0, k_count - 1);
  std::uniform_real_distribution<double> pick_eps(-cfg.epsilon_max, cfg.epsilon_max);
  std::vector<TrainingSample> batch(static_cast<std::size_t>(cfg.batch_size));
  for (auto& s : batch) {
    s.z.resize(static_cast<std::size_t>(generator.latent_dim()));
    for (auto& v : s.z) v = static_cast<float>(normal(rng));
    s.k = pick_k(rng);
    s.epsilon = clamp_epsilon(pick_eps(rng), cfg.epsilon_min);
    if (generator.class_conditional()) {
      s.class_label = std::uniform_int_distribution<int>(0, generator.num_classes() - 1)(rng);
    }
  }
  nn::parallel_for(batch.size(), [&](std::size_t i) {
    auto& s = batch[i];
    s.original = generator.generate(s.z, s.class_label);
    s.shifted = generator.generate(DirectionMatrix::apply_shift(directions, s.z, s.k, s.epsilon), s.class_label);
  });
  return batch;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "step,total,L_cl,L_r,acc\n";
  for (const auto& r : records) {
    out << r.step << ',' << r.total << ',' << r.classification << ',' << r.regression << ',' << r.running_accuracy << '\n';
  }
  return out.str();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const { io::write_text(path, to_csv()); }

bool operator==(const TrainHistory& a, const TrainHistory& b) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.step != y.step || x.total != y.total || x.classification != y.classification ||
        x.regression != y.regression || x.batch_accuracy != y.batch_accuracy ||
        x.running_accuracy != y.running_accuracy) {
      return false;
    }
  }
  return true;
}

namespace {

struct SampleGrad {
  std::vector<float> params;
  std::vector<float> direction;  // dL/da_k for this sample's k
  LossTerms loss;
  bool correct = false;
};

}  // namespace

TrainResult train(const Generator& generator, const TrainConfig& cfg, std::optional<DirectionMatrix> initial,
                  const StepCallback& on_step) {
  cfg.validate();
  const int d = generator.latent_dim();
  const int k_count = cfg.num_directions;
  Rng rng(cfg.seed);

  DirectionMatrix directions = initial ? std::move(*initial) : DirectionMatrix::identity(cfg.a_mode, d, k_count);
  if (directions.latent_dim() != d || directions.num_directions() != k_count) {
    throw Error(ErrorKind::ShapeMismatch, "initial direction matrix does not match generator/K");
  }
  directions.set_seed(cfg.seed);
  ConvNet net(reconstructor_config(generator.image_shape(), k_count, cfg.architecture), rng);

  TrainResult result{directions, net, {}, {}};
  DirectionMatrix& a = result.directions;
  ConvNet& r = result.reconstructor;

  const int snapshot_every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::max(1, cfg.steps / 10);
  result.snapshots.push_back({0, a});
  if (cfg.steps == 0) return result;

  nn::Adam adam(nn::AdamOptions{cfg.learning_rate});
  const std::size_t np = r.param_count();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t pixels = generator.image_shape().size();
  std::vector<SampleGrad> grads(batch);
  std::vector<float> grad_r(np);
  std::deque<double> acc_window;
  std::deque<double> reg_window;
  double acc_sum = 0;
  double reg_sum = 0;

  for (int step = 1; step <= cfg.steps; ++step) {
    const Eigen::MatrixXd eff = a.effective();
    auto samples = sample_training_batch(rng, cfg, eff, generator);
    const float inv_b = 1.0f / static_cast<float>(batch);

    nn::parallel_for(batch, [&](std::size_t i) {
      const auto& s = samples[i];
      auto& g = grads[i];
      g.params.assign(np, 0.0f);
      ConvNet::Cache cache;
      const auto input = concat_pair(s.original, s.shifted);
      const NetOutput out = r.forward(input, &cache);
      g.loss = reconstruction_loss(out, s.k, s.epsilon, cfg.lambda);
      g.correct = out.predicted() == s.k;

      std::vector<float> glogits(out.logits.size());
      nn::softmax_cross_entropy(out.logits, s.k, 1.0, glogits);
      for (auto& v : glogits) v *= inv_b;
      const double diff = static_cast<double>(out.epsilon_hat) - s.epsilon;
      const float geps = static_cast<float>(cfg.lambda * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0))) * inv_b;

      if (cfg.train_directions) {
        std::vector<float> ginput(input.size());
        r.backward(cache, glogits, geps, g.params, ginput);
        Image gshift(generator.image_shape());
        std::copy(ginput.begin() + static_cast<std::ptrdiff_t>(pixels), ginput.end(), gshift.pixels.begin());
        const auto shifted_z = DirectionMatrix::apply_shift(eff, s.z, s.k, s.epsilon);
        g.direction = generator.vjp(shifted_z, s.class_label, gshift);
        for (auto& v : g.direction) v = static_cast<float>(v * s.epsilon);
      } else {
        r.backward(cache, glogits, geps, g.params);
      }
    });

    StepRecord rec;
    rec.step = step;
    std::fill(grad_r.begin(), grad_r.end(), 0.0f);
    Eigen::MatrixXd grad_eff = Eigen::MatrixXd::Zero(d, k_count);
    int correct = 0;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& g = grads[i];
      for (std::size_t p = 0; p < np; ++p) grad_r[p] += g.params[p];
      if (cfg.train_directions) {
        for (int j = 0; j < d; ++j) grad_eff(j, samples[i].k) += g.direction[static_cast<std::size_t>(j)];
      }
      rec.total += g.loss.total;
      rec.classification += g.loss.classification;
      rec.regression += g.loss.regression;
      correct += g.correct ? 1 : 0;
    }
    rec.total /= static_cast<double>(batch);
    rec.classification /= static_cast<double>(batch);
    rec.regression /= static_cast<double>(batch);
    rec.batch_accuracy = static_cast<double>(correct) / static_cast<double>(batch);
    if (!std::isfinite(rec.total)) {
      throw Error(ErrorKind::NonFinite, "non-finite loss at step " + std::to_string(step) +
                                            " (L_cl=" + std::to_string(rec.classification) +
                                            ", L_r=" + std::to_string(rec.regression) + ")");
    }

    acc_window.push_back(rec.batch_accuracy);
    reg_window.push_back(rec.regression);
    acc_sum += rec.batch_accuracy;
    reg_sum += rec.regression;
    if (static_cast<int>(acc_window.size()) > cfg.running_window) {
      acc_sum -= acc_window.front();
      reg_sum -= reg_window.front();
      acc_window.pop_front();
      reg_window.pop_front();
    }
    rec.running_accuracy = acc_sum / static_cast<double>(acc_window.size());
    rec.running_regression = reg_sum / static_cast<double>(reg_window.size());

    if (cfg.train_directions) {
      const auto grad_raw = a.backprop(grad_eff);
      const nn::ParamSlot slots[] = {{r.params(), grad_r}, {a.raw_params(), grad_raw}};
      adam.step(slots);
    } else {
      const nn::ParamSlot slots[] = {{r.params(), grad_r}};
      adam.step(slots);
    }

    result.history.records.push_back(rec);
    if (on_step) on_step(rec);
    if (step % snapshot_every == 0 || step == cfg.steps) {
      if (result.snapshots.back().step != step) result.snapshots.push_back({step, a});
    }
  }
  return result;
}

EvalResult evaluate_reconstructor(const Generator& generator, const Eigen::MatrixXd& directions,
                                  const ConvNet& reconstructor, const TrainConfig& cfg, int n,
                                  std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::Validation, "evaluation needs at least one sample");
  Rng rng(seed);
  TrainConfig batch_cfg = cfg;
  EvalResult res;
  int done = 0;
  int correct = 0;
  double abs_err = 0;
  while (done < n) {
    batch_cfg.batch_size = std::min(64, n - done);
    const auto samples = sample_training_batch(rng, batch_cfg, directions, generator);
    std::vector<NetOutput> outs(samples.size());
    nn::parallel_for(samples.size(), [&](std::size_t i) {
      outs[i] = reconstructor.forward(concat_pair(samples[i].original, samples[i].shifted));
    });
    for (std::size_t i = 0; i < samples.size(); ++i) {
      correct += outs[i].predicted() == samples[i].k ? 1 : 0;
      abs_err += std::abs(samples[i].epsilon - static_cast<double>(outs[i].epsilon_hat));
    }
    done += batch_cfg.batch_size;
  }
  res.accuracy = static_cast<double>(correct) / n;
  res.mean_abs_error = abs_err / n;
  return res;
}

void save_training_run(const std::filesystem::path& dir, const TrainResult& result, const TrainConfig& cfg,
                       const io::Json& generator_info) {
  std::filesystem::create_directories(dir);
  result.directions.save(dir / "directions.bin");
  result.reconstructor.save(dir / "reconstructor.bin");
  result.history.write_csv(dir / "history.csv");
  for (const auto& snap : result.snapshots) {
    snap.directions.save(dir / "snapshots" / ("step_" + std::to_string(snap.step) + ".bin"));
  }
  io::write_json(dir / "config.json", {{"train", cfg.to_json()}, {"generator", generator_info}});
}

}  // namespace latentdirs
