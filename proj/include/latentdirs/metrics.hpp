#pragma once

// Evaluation of discovered directions: reconstructor classification accuracy
// (RCA), direction variation naturalness (DVN), human-study aggregation and
// ground-truth recovery on the oracle.

#include <optional>
#include <string>
#include <vector>

#include "latentdirs/direction_space.hpp"
#include "latentdirs/generator.hpp"
#include "latentdirs/io.hpp"
#include "latentdirs/trainer.hpp"

namespace latentdirs {

// Trains a fresh reconstructor against the frozen columns of `fixed` using the
// trainer protocol and returns its accuracy on `eval_samples` fresh samples.
double evaluate_rca(const Generator& generator, const DirectionMatrix& fixed, const TrainConfig& cfg,
                    int eval_samples = 1000);

struct DvnConfig {
  double shift_length = 6.0;
  int dataset_size = 3200;
  int classifier_steps = 100;
  int classifier_batch = 32;
  double classifier_lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] io::Json to_json() const;
  void merge_json(const io::Json& j);
};

// Labelled set {(G(z + s h), 1), (G(z - s h), 0)}, one random sign per z.
struct ShiftDataset {
  std::vector<Image> images;
  std::vector<int> labels;
};

ShiftDataset build_shift_dataset(const Generator& generator, const Eigen::VectorXd& h, const DvnConfig& cfg,
                                 Rng& rng);

// h is normalized internally and must be nonzero. Throws InsufficientData when
// fewer than cfg.dataset_size real images are given.
double evaluate_dvn(const Generator& generator, const Eigen::VectorXd& h, const std::vector<Image>& real_images,
                    const DvnConfig& cfg);

struct DvnRanking {
  std::vector<int> order;          // direction indices, descending DVN, ties by index
  std::vector<double> per_direction;
  double mean = 0;
  double top = 0;                  // mean over the best min(top_n, K)
};

// DVN for every column; top_n defaults to 50.
DvnRanking dvn_rank(const Generator& generator, const DirectionMatrix& directions,
                    const std::vector<Image>& real_images, const DvnConfig& cfg, int top_n = 50);
// Ranking from precomputed values.
DvnRanking rank_values(std::vector<double> dvn, int top_n = 50);

enum class Category { Geometry, Coloring, Textural, None };
std::string to_string(Category c);
Category parse_category(const std::string& s);

struct AnnotationRecord {
  std::string assessor_id;
  int direction_index = 0;
  bool consistent = false;
  bool single_factor = false;
  Category category = Category::None;
  std::string z_set_id;

  [[nodiscard]] bool mark() const { return consistent && single_factor; }
  // Throws Validation when a category is given without both marks.
  void validate() const;
  [[nodiscard]] io::Json to_json() const;
  static AnnotationRecord from_json(const io::Json& j);
};

struct CategoryRates {
  double geometry = 0;
  double coloring = 0;
  double textural = 0;
};

struct MosResult {
  double mos = 0;
  CategoryRates rates;
};

// mos = mean mark; rates = per-category share among mark-1 records.
// Throws InsufficientData for an empty set.
MosResult mos_aggregate(const std::vector<AnnotationRecord>& records);

// Maximum-weight one-to-one assignment of rows to columns (rows <= cols).
// Returns the column chosen for each row.
std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weights);

struct RecoveryScore {
  double mean_abs_cosine = 0;
  // assignment[i] = learned column matched to ground-truth column i.
  std::vector<int> assignment;
};

RecoveryScore direction_recovery_score(const Eigen::MatrixXd& learned, const Eigen::MatrixXd& ground_truth);
RecoveryScore direction_recovery_score(const DirectionMatrix& learned, const Eigen::MatrixXd& ground_truth);

struct MetricsReport {
  std::optional<double> rca;
  std::optional<double> rca_random;
  std::optional<double> rca_coordinate;
  std::optional<double> mos;
  std::vector<double> dvn_per_direction;
  std::optional<double> dvn_mean;
  std::optional<double> dvn_top;
  std::optional<CategoryRates> category_rates;
  std::optional<double> recovery;

  // Throws Validation if any value leaves [0, 1] or the rates sum above 1.
  void validate() const;
  [[nodiscard]] io::Json to_json() const;
  static MetricsReport from_json(const io::Json& j);
};

}  // namespace latentdirs
