#include <doctest.h>

#include <filesystem>

#include "latentdirs/charts.hpp"
#include "latentdirs/error.hpp"

using namespace latentdirs;

namespace {

OracleGenerator oracle() {
  OracleSpec spec;
  spec.seed = 7;
  return OracleGenerator(spec);
}

}  // namespace

TEST_CASE("chart shifts are evenly spaced with an exact zero") {
  ChartSpec spec;
  const auto s = spec.shifts();
  REQUIRE(s.size() == 7);
  const std::vector<double> expected{-9, -6, -3, 0, 3, 6, 9};
  for (std::size_t i = 0; i < 7; ++i) CHECK(s[i] == doctest::Approx(expected[i]));
  CHECK(s[3] == 0.0);

  spec.s_min = -1;
  spec.s_max = 2;
  spec.num_steps = 4;
  const auto t = spec.shifts();
  CHECK(t.front() == -1.0);
  CHECK(t.back() == 2.0);

  spec.num_steps = 1;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = ChartSpec{};
  spec.s_min = 3;
  spec.s_max = -3;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("chart grid layout and zero column") {
  const auto g = oracle();
  Rng rng(1);
  const auto a = DirectionMatrix::random(DirectionMode::UnitNorm, 16, 4, rng);
  ChartSpec spec;
  spec.direction = 2;
  spec.z_seeds = {3, 4};
  const auto grid = render_chart(g, a, spec);
  CHECK(grid.rows == 2);
  CHECK(grid.cols == 7);
  REQUIRE(grid.cells.size() == 14);
  for (int r = 0; r < 2; ++r) {
    const auto row = chart_row(g, spec.z_seeds[static_cast<std::size_t>(r)]);
    CHECK(grid.cells[static_cast<std::size_t>(r * 7 + 3)].pixels == g.generate(row.z).pixels);
    const auto shifted = a.apply_shift(row.z, 2, 9.0);
    CHECK(grid.cells[static_cast<std::size_t>(r * 7 + 6)].pixels == g.generate(shifted).pixels);
  }
  const auto tiled = grid.tiled(1);
  CHECK(tiled.shape.height == 2 * 32 + 1);
  CHECK(tiled.shape.width == 7 * 32 + 6);

  spec.direction = 4;
  CHECK_THROWS_AS(render_chart(g, a, spec), Error);
}

TEST_CASE("chart rows are seeded and carry a class for conditional generators") {
  OracleSpec spec;
  spec.num_classes = 4;
  const OracleGenerator g(spec);
  const auto a = chart_row(g, 11);
  const auto b = chart_row(g, 11);
  CHECK(a.z == b.z);
  CHECK(a.class_label == b.class_label);
  REQUIRE(a.class_label.has_value());
  CHECK(*a.class_label >= 0);
  CHECK(*a.class_label < 4);
  CHECK(chart_row(oracle(), 11).class_label == std::nullopt);
}

TEST_CASE("evolution chart has one row per snapshot") {
  const auto g = oracle();
  TrainConfig cfg;
  cfg.steps = 8;
  cfg.batch_size = 2;
  cfg.num_directions = 3;
  cfg.checkpoint_every = 2;
  const auto res = train(g, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "ld_test_evolution";
  std::filesystem::remove_all(dir);
  save_training_run(dir, res, cfg, g.spec().to_json());

  const auto snaps = load_snapshots(dir);
  REQUIRE(snaps.size() == 5);
  for (std::size_t i = 0; i < snaps.size(); ++i) CHECK(snaps[i].step == static_cast<int>(2 * i));
  CHECK(snaps.back().directions.effective() == res.directions.effective());

  ChartSpec spec;
  spec.direction = 1;
  spec.num_steps = 5;
  const auto grid = render_evolution(g, snaps, spec);
  CHECK(grid.rows == 5);
  CHECK(grid.cols == 5);
  // every row shares the same z, so the zero column repeats
  for (int r = 1; r < 5; ++r) CHECK(grid.cells[static_cast<std::size_t>(r * 5 + 2)].pixels == grid.cells[2].pixels);

  const auto q = quartile_snapshots(snaps);
  REQUIRE(q.size() == 5);
  CHECK(q.front().step == 0);
  CHECK(q.back().step == 8);
  CHECK(q[2].step == 4);
}

TEST_CASE("report export leaves absent values empty") {
  MetricsReport ours;
  ours.rca = 0.991;
  ours.mos = 0.69;
  ours.dvn_per_direction = {0.8, 0.7};
  ours.dvn_mean = 0.75;
  ours.dvn_top = 0.75;
  MetricsReport random;
  random.rca = 0.467;
  const std::vector<std::pair<std::string, MetricsReport>> reports{{"ours", ours}, {"random", random}};

  const auto t1 = table1_csv(reports);
  CHECK(t1 == "method,RCA,MOS\nours,0.9910,0.6900\nrandom,0.4670,\n");
  const auto dvn = dvn_csv(reports);
  CHECK(dvn.rfind("method,DVN,DVN_top", 0) == 0);
  CHECK(dvn.find("random,,") != std::string::npos);
  const auto text = report_text(reports);
  CHECK(text.find("0.99") != std::string::npos);
  CHECK(text.find('-') != std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "ld_test_report";
  std::filesystem::remove_all(dir);
  export_report(reports, dir);
  CHECK(io::read_text(dir / "table1.csv") == t1);
  CHECK(std::filesystem::exists(dir / "dvn.csv"));
  CHECK(std::filesystem::exists(dir / "report.txt"));
}

TEST_CASE("png encoding is deterministic") {
  const auto g = oracle();
  const auto a = DirectionMatrix::identity(DirectionMode::UnitNorm, 16, 2);
  ChartSpec spec;
  spec.z_seeds = {0};
  const auto one = encode_png(render_chart(g, a, spec).tiled());
  const auto two = encode_png(render_chart(g, a, spec).tiled());
  CHECK(one == two);
  CHECK(one.size() > 8);
  CHECK(one[1] == 'P');
}
