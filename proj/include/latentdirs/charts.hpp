#pragma once

// Direction charts (rows of G(z + s a_k) over a range of s) and
// comparison-table export.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latentdirs/direction_space.hpp"
#include "latentdirs/generator.hpp"
#include "latentdirs/metrics.hpp"
#include "latentdirs/trainer.hpp"

namespace latentdirs {

struct ChartSpec {
  int direction = 0;
  std::vector<std::uint64_t> z_seeds{0, 1, 2, 3, 4};
  double s_min = -9.0;
  double s_max = 9.0;
  int num_steps = 7;

  void validate() const;
  // num_steps evenly spaced values from s_min to s_max.
  [[nodiscard]] std::vector<double> shifts() const;
};

// The latent code (and class, for conditional generators) of a chart row.
struct ChartRow {
  LatentCode z;
  std::optional<int> class_label;
};
ChartRow chart_row(const Generator& generator, std::uint64_t seed);

// One cell: G(z + s a_k) for the row's code.
Image render_cell(const Generator& generator, const Eigen::MatrixXd& directions, const ChartRow& row, int k,
                  double s);

struct ChartGrid {
  std::vector<Image> cells;  // row-major, rows x cols
  int rows = 0;
  int cols = 0;

  [[nodiscard]] Image tiled(int pad = 1) const;
};

// Rows are z seeds, columns the shifts of spec.
ChartGrid render_chart(const Generator& generator, const DirectionMatrix& directions, const ChartSpec& spec);

// Evolution chart: one row per snapshot, using the first z seed.
ChartGrid render_evolution(const Generator& generator, const std::vector<DirectionSnapshot>& snapshots,
                           const ChartSpec& spec);
// Snapshot matrices saved by save_training_run, ordered by step.
std::vector<DirectionSnapshot> load_snapshots(const std::filesystem::path& run_dir);
// Picks the snapshots closest to 0, 25, 50, 75 and 100% of the last step.
std::vector<DirectionSnapshot> quartile_snapshots(const std::vector<DirectionSnapshot>& all);

// Writes table1.csv (RCA and MOS per method), dvn.csv and report.txt.
// Absent values are left empty in CSV and shown as "-" in text.
void export_report(const std::vector<std::pair<std::string, MetricsReport>>& reports,
                   const std::filesystem::path& dir);
std::string table1_csv(const std::vector<std::pair<std::string, MetricsReport>>& reports);
std::string dvn_csv(const std::vector<std::pair<std::string, MetricsReport>>& reports);
std::string report_text(const std::vector<std::pair<std::string, MetricsReport>>& reports);

}  // namespace latentdirs
