#include "latentdirs/charts.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <regex>
#include <sstream>

#include "latentdirs/error.hpp"

namespace latentdirs {

void ChartSpec::validate() const {
  if (!(s_min < s_max)) throw Error(ErrorKind::Validation, "chart needs s_min < s_max");
  if (num_steps < 2) throw Error(ErrorKind::Validation, "chart needs at least 2 steps");
  if (z_seeds.empty()) throw Error(ErrorKind::Validation, "chart needs at least one z seed");
  if (direction < 0) throw Error(ErrorKind::Index, "negative direction index");
}

std::vector<double> ChartSpec::shifts() const {
  std::vector<double> s(static_cast<std::size_t>(num_steps));
  for (int i = 0; i < num_steps; ++i) {
    s[static_cast<std::size_t>(i)] = s_min + (s_max - s_min) * i / (num_steps - 1);
  }
  // Snap the midpoint of a symmetric range to exactly 0.
  if (num_steps % 2 == 1 && s_min == -s_max) s[static_cast<std::size_t>(num_steps / 2)] = 0.0;
  return s;
}

ChartRow chart_row(const Generator& generator, std::uint64_t seed) {
  Rng rng(seed);
  ChartRow row;
  row.z = sample_latent(1, generator.latent_dim(), rng).front();
  if (generator.class_conditional()) {
    row.class_label = std::uniform_int_distribution<int>(0, generator.num_classes() - 1)(rng);
  }
  return row;
}

Image render_cell(const Generator& generator, const Eigen::MatrixXd& directions, const ChartRow& row, int k,
                  double s) {
  if (s == 0.0) return generator.generate(row.z, row.class_label);
  return generator.generate(DirectionMatrix::apply_shift(directions, row.z, k, s), row.class_label);
}

Image ChartGrid::tiled(int pad) const { return tile(cells, rows, cols, pad); }

namespace {

ChartGrid render_rows(const Generator& generator, const std::vector<Eigen::MatrixXd>& matrices,
                      const std::vector<ChartRow>& rows, const ChartSpec& spec) {
  const auto shifts = spec.shifts();
  ChartGrid grid;
  grid.rows = static_cast<int>(rows.size());
  grid.cols = static_cast<int>(shifts.size());
  grid.cells.resize(rows.size() * shifts.size());
  nn::parallel_for(grid.cells.size(), [&](std::size_t i) {
    const std::size_t r = i / shifts.size();
    grid.cells[i] = render_cell(generator, matrices[r], rows[r], spec.direction, shifts[i % shifts.size()]);
  });
  return grid;
}

}  // namespace

ChartGrid render_chart(const Generator& generator, const DirectionMatrix& directions, const ChartSpec& spec) {
  spec.validate();
  if (spec.direction >= directions.num_directions()) {
    throw Error(ErrorKind::Index, "direction " + std::to_string(spec.direction) + " out of range [0, " +
                                      std::to_string(directions.num_directions()) + ")");
  }
  if (directions.latent_dim() != generator.latent_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "direction matrix does not match the generator latent dim");
  }
  std::vector<ChartRow> rows;
  for (auto seed : spec.z_seeds) rows.push_back(chart_row(generator, seed));
  const std::vector<Eigen::MatrixXd> matrices(rows.size(), directions.effective());
  return render_rows(generator, matrices, rows, spec);
}

ChartGrid render_evolution(const Generator& generator, const std::vector<DirectionSnapshot>& snapshots,
                           const ChartSpec& spec) {
  spec.validate();
  if (snapshots.empty()) throw Error(ErrorKind::Io, "no direction snapshots to render");
  std::vector<Eigen::MatrixXd> matrices;
  for (const auto& s : snapshots) {
    if (spec.direction >= s.directions.num_directions()) throw Error(ErrorKind::Index, "direction out of range");
    matrices.push_back(s.directions.effective());
  }
  const std::vector<ChartRow> rows(snapshots.size(), chart_row(generator, spec.z_seeds.front()));
  return render_rows(generator, matrices, rows, spec);
}

std::vector<DirectionSnapshot> load_snapshots(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "snapshots";
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::Io, "no snapshots directory in " + run_dir.string());
  static const std::regex name(R"(step_(\d+)\.bin)");
  std::vector<DirectionSnapshot> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string file = entry.path().filename().string();
    if (std::regex_match(file, m, name)) out.push_back({std::stoi(m[1].str()), DirectionMatrix::load(entry.path())});
  }
  if (out.empty()) throw Error(ErrorKind::Io, "no snapshots found in " + dir.string());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return out;
}

std::vector<DirectionSnapshot> quartile_snapshots(const std::vector<DirectionSnapshot>& all) {
  if (all.empty()) throw Error(ErrorKind::Io, "no snapshots");
  const int last = all.back().step;
  std::vector<DirectionSnapshot> out;
  for (int q = 0; q <= 4; ++q) {
    const double target = last * q / 4.0;
    const auto best = std::min_element(all.begin(), all.end(), [&](const auto& a, const auto& b) {
      return std::abs(a.step - target) < std::abs(b.step - target);
    });
    out.push_back(*best);
  }
  return out;
}

namespace {

std::string cell(std::optional<double> v, bool text) {
  if (!v) return text ? "-" : "";
  std::ostringstream out;
  out << std::fixed << std::setprecision(text ? 2 : 4) << *v;
  return out.str();
}

}  // namespace

std::string table1_csv(const std::vector<std::pair<std::string, MetricsReport>>& reports) {
  std::ostringstream out;
  out << "method,RCA,MOS\n";
  for (const auto& [name, r] : reports) out << name << ',' << cell(r.rca, false) << ',' << cell(r.mos, false) << '\n';
  return out.str();
}

std::string dvn_csv(const std::vector<std::pair<std::string, MetricsReport>>& reports) {
  std::size_t width = 0;
  for (const auto& [name, r] : reports) width = std::max(width, r.dvn_per_direction.size());
  std::ostringstream out;
  out << "method,DVN,DVN_top";
  for (std::size_t k = 0; k < width; ++k) out << ",h" << k;
  out << '\n';
  for (const auto& [name, r] : reports) {
    out << name << ',' << cell(r.dvn_mean, false) << ',' << cell(r.dvn_top, false);
    for (std::size_t k = 0; k < width; ++k) {
      out << ',' << (k < r.dvn_per_direction.size() ? cell(r.dvn_per_direction[k], false) : "");
    }
    out << '\n';
  }
  return out.str();
}

std::string report_text(const std::vector<std::pair<std::string, MetricsReport>>& reports) {
  std::size_t name_w = 6;
  for (const auto& [name, r] : reports) name_w = std::max(name_w, name.size());
  std::ostringstream out;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c) {
    out << std::left << std::setw(static_cast<int>(name_w) + 2) << a << std::setw(8) << b << c << '\n';
  };
  row("method", "RCA", "MOS");
  for (const auto& [name, r] : reports) row(name, cell(r.rca, true), cell(r.mos, true));
  out << '\n';
  row("method", "DVN", "DVN_top");
  for (const auto& [name, r] : reports) row(name, cell(r.dvn_mean, true), cell(r.dvn_top, true));
  bool any_rates = false;
  for (const auto& [name, r] : reports) any_rates = any_rates || r.category_rates.has_value();
  if (any_rates) {
    out << "\nmethod: geometry / coloring / textural\n";
    for (const auto& [name, r] : reports) {
      out << name << ": ";
      if (r.category_rates) {
        out << cell(r.category_rates->geometry, true) << " / " << cell(r.category_rates->coloring, true) << " / "
            << cell(r.category_rates->textural, true) << '\n';
      } else {
        out << "-\n";
      }
    }
  }
  bool any_recovery = false;
  for (const auto& [name, r] : reports) any_recovery = any_recovery || r.recovery.has_value();
  if (any_recovery) {
    out << "\nrecovery (mean |cos|)\n";
    for (const auto& [name, r] : reports) out << name << ": " << cell(r.recovery, true) << '\n';
  }
  return out.str();
}

void export_report(const std::vector<std::pair<std::string, MetricsReport>>& reports,
                   const std::filesystem::path& dir) {
  if (reports.empty()) throw Error(ErrorKind::InsufficientData, "no reports to export");
  for (const auto& [name, r] : reports) r.validate();
  std::filesystem::create_directories(dir);
  io::write_text(dir / "table1.csv", table1_csv(reports));
  io::write_text(dir / "dvn.csv", dvn_csv(reports));
  io::write_text(dir / "report.txt", report_text(reports));
}

}  // namespace latentdirs
