#pragma once

// Joint optimization of the direction matrix A and the reconstructor R:
//   min_{A,R} E_{z,k,eps} [ CE(R_logits, k) + lambda * |eps - eps_hat| ]
// with a single Adam over both parameter sets.

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "latentdirs/direction_space.hpp"
#include "latentdirs/generator.hpp"
#include "latentdirs/io.hpp"
#include "latentdirs/reconstructor.hpp"

namespace latentdirs {

struct TrainConfig {
  int num_directions = 8;
  double lambda = 0.25;
  double epsilon_max = 6.0;
  double epsilon_min = 0.5;
  // 1e-4 at 1e5 steps; ten times larger for the 3000-step default.
  double learning_rate = 1e-3;
  int steps = 3000;
  int batch_size = 32;
  DirectionMode a_mode = DirectionMode::UnitNorm;
  std::uint64_t seed = 0;
  // False freezes A (RCA baselines); only R is optimized.
  bool train_directions = true;
  // Snapshot interval for A; 0 means every 10% of steps.
  int checkpoint_every = 0;
  std::string architecture = "lenet";
  // Steps averaged for the running accuracy / regression error.
  int running_window = 100;

  void validate() const;
  [[nodiscard]] io::Json to_json() const;
  // Missing keys keep their current values.
  void merge_json(const io::Json& j);
};

// sign(eps) * max(|eps|, eps_min), with 0 mapped to +eps_min.
double clamp_epsilon(double epsilon, double epsilon_min);

struct LossTerms {
  double total = 0;
  double classification = 0;
  double regression = 0;
};

// Per-sample objective. Throws Error{NonFinite} for non-finite logits.
LossTerms reconstruction_loss(const NetOutput& out, int k, double epsilon, double lambda);

struct TrainingSample {
  LatentCode z;
  int k = 0;
  double epsilon = 0;
  std::optional<int> class_label;
  Image original;
  Image shifted;
};

// Draws z ~ N(0, I), k ~ U{0..K-1}, eps ~ U[-eps_max, eps_max] (clamped) and a
// class when G is conditional, in that order per sample, then renders
// (G(z), G(z + eps a_k)).
std::vector<TrainingSample> sample_training_batch(Rng& rng, const TrainConfig& cfg,
                                                  const Eigen::MatrixXd& directions,
                                                  const Generator& generator);

struct StepRecord {
  int step = 0;
  double total = 0;
  double classification = 0;
  double regression = 0;
  double batch_accuracy = 0;
  double running_accuracy = 0;
  double running_regression = 0;
};

struct TrainHistory {
  std::vector<StepRecord> records;

  [[nodiscard]] bool empty() const { return records.empty(); }
  [[nodiscard]] const StepRecord& back() const { return records.back(); }
  // CSV with columns step,total,L_cl,L_r,acc (acc = running accuracy).
  [[nodiscard]] std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  friend bool operator==(const TrainHistory& a, const TrainHistory& b);
};

struct DirectionSnapshot {
  int step = 0;
  DirectionMatrix directions;
};

struct TrainResult {
  DirectionMatrix directions;
  ConvNet reconstructor;
  TrainHistory history;
  std::vector<DirectionSnapshot> snapshots;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Initial A: identity columns (S = 0 in orthonormal mode) unless `initial` is given.
TrainResult train(const Generator& generator, const TrainConfig& cfg,
                  std::optional<DirectionMatrix> initial = std::nullopt,
                  const StepCallback& on_step = {});

struct EvalResult {
  double accuracy = 0;
  double mean_abs_error = 0;
};

// Accuracy of R on n fresh samples against the given directions.
EvalResult evaluate_reconstructor(const Generator& generator, const Eigen::MatrixXd& directions,
                                  const ConvNet& reconstructor, const TrainConfig& cfg, int n,
                                  std::uint64_t seed);

// Writes directions.bin(+.json), reconstructor.bin(+.json), history.csv,
// snapshots/step_N.bin and config.json into dir.
void save_training_run(const std::filesystem::path& dir, const TrainResult& result, const TrainConfig& cfg,
                       const io::Json& generator_info);

}  // namespace latentdirs
