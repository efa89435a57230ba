#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "latentdirs/annotation_service.hpp"
#include "latentdirs/error.hpp"
#include "latentdirs/metrics.hpp"

using namespace latentdirs;

namespace {

AnnotationRecord rec(std::string who, int k, bool consistent, bool single, Category c = Category::None) {
  AnnotationRecord r;
  r.assessor_id = std::move(who);
  r.direction_index = k;
  r.consistent = consistent;
  r.single_factor = single;
  r.category = c;
  return r;
}

// Best total weight over all injective row -> column maps.
double brute_force_best(const Eigen::MatrixXd& w) {
  std::vector<int> cols(static_cast<std::size_t>(w.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = -1e300;
  do {
    double s = 0;
    for (int i = 0; i < w.rows(); ++i) s += w(i, cols[static_cast<std::size_t>(i)]);
    best = std::max(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace

TEST_CASE("hungarian assignment matches brute force") {
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int rows = 1 + trial % 5;
    const int cols = rows + trial % 3;
    Eigen::MatrixXd w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = trial % 4 == 0 ? std::floor(u(rng) * 3) : u(rng);
    const auto a = max_weight_assignment(w);
    REQUIRE(a.size() == static_cast<std::size_t>(rows));
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    double total = 0;
    for (int i = 0; i < rows; ++i) total += w(i, a[static_cast<std::size_t>(i)]);
    CHECK(total == doctest::Approx(brute_force_best(w)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(max_weight_assignment(Eigen::MatrixXd::Ones(3, 2)), Error);
}

TEST_CASE("recovery score examples") {
  Rng rng(2);
  const auto q = random_orthogonal(16, rng);
  const Eigen::MatrixXd gt = q.leftCols(6);

  Eigen::MatrixXd padded(16, 8);
  padded << gt, q.col(10), q.col(12);
  auto r = direction_recovery_score(padded, gt);
  CHECK(r.mean_abs_cosine == doctest::Approx(1.0));
  CHECK(r.assignment == std::vector<int>{0, 1, 2, 3, 4, 5});

  // permuted and sign-flipped, with unnormalized lengths
  Eigen::MatrixXd shuffled(16, 8);
  shuffled << q.col(12), -3.0 * gt.col(4), gt.col(0), q.col(10), 0.5 * gt.col(2), -gt.col(1), gt.col(5), -gt.col(3);
  r = direction_recovery_score(shuffled, gt);
  CHECK(r.mean_abs_cosine == doctest::Approx(1.0));
  CHECK(r.assignment == std::vector<int>{2, 5, 4, 7, 1, 6});

  // sign flips of the ground truth as well
  CHECK(direction_recovery_score(shuffled, -gt).mean_abs_cosine == doctest::Approx(1.0));

  // same score through the DirectionMatrix overload
  CHECK(direction_recovery_score(DirectionMatrix::from_columns(shuffled), gt).mean_abs_cosine == doctest::Approx(1.0));

  CHECK_THROWS_AS(direction_recovery_score(Eigen::MatrixXd::Identity(16, 4), gt), Error);
  CHECK_THROWS_AS(direction_recovery_score(Eigen::MatrixXd::Identity(15, 8), gt), Error);
}

TEST_CASE("recovery score is invariant to column permutations and sign flips") {
  Rng rng(3);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd learned = random_orthogonal(16, rng).leftCols(8);
    const Eigen::MatrixXd gt = random_orthogonal(16, rng).leftCols(6);
    const double base = direction_recovery_score(learned, gt).mean_abs_cosine;
    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd moved(16, 8);
    for (int j = 0; j < 8; ++j) moved.col(j) = (coin(rng) ? -1.0 : 1.0) * learned.col(perm[static_cast<std::size_t>(j)]);
    Eigen::MatrixXd gt_moved = gt;
    for (int j = 0; j < 6; ++j) gt_moved.col(j) *= coin(rng) ? -1.0 : 1.0;
    CHECK(direction_recovery_score(moved, gt_moved).mean_abs_cosine == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("random directions score below 0.6 on average") {
  Rng rng(4);
  double sum = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const Eigen::MatrixXd learned = random_orthogonal(16, rng).leftCols(8);
    const Eigen::MatrixXd gt = random_orthogonal(16, rng).leftCols(6);
    sum += direction_recovery_score(learned, gt).mean_abs_cosine;
  }
  MESSAGE("random-A recovery baseline: " << sum / trials);
  CHECK(sum / trials < 0.6);
}

TEST_CASE("mos_aggregate arithmetic") {
  const std::vector<AnnotationRecord> half{rec("a", 0, true, true), rec("a", 1, true, true), rec("a", 2, true, false),
                                           rec("a", 3, false, true)};
  CHECK(mos_aggregate(half).mos == 0.5);

  std::vector<AnnotationRecord> cats{rec("a", 0, true, true, Category::Geometry), rec("a", 1, true, true, Category::Geometry),
                                     rec("a", 2, true, true, Category::Coloring), rec("a", 3, true, true, Category::Textural)};
  const auto m = mos_aggregate(cats);
  CHECK(m.mos == 1.0);
  CHECK(m.rates.geometry == 0.5);
  CHECK(m.rates.coloring == 0.25);
  CHECK(m.rates.textural == 0.25);

  std::reverse(cats.begin(), cats.end());
  CHECK(mos_aggregate(cats).rates.geometry == 0.5);

  CHECK_THROWS_AS(mos_aggregate({}), Error);
  // category without both marks is rejected
  CHECK_THROWS_AS(rec("a", 0, true, false, Category::Coloring).validate(), Error);
}

TEST_CASE("category proportions fixture") {
  const auto records = AnnotationStore::read_latest(LD_FIXTURES_DIR "/category_rates.jsonl");
  REQUIRE(records.size() == 25);
  const auto m = mos_aggregate(records);
  CHECK(m.mos == doctest::Approx(0.8));
  CHECK(m.rates.geometry == doctest::Approx(0.45));
  CHECK(m.rates.coloring == doctest::Approx(0.2));
  CHECK(m.rates.textural == doctest::Approx(0.35));
}

TEST_CASE("eleven-assessor fixture") {
  const auto records = AnnotationStore::read_latest(LD_FIXTURES_DIR "/eleven_assessors.jsonl");
  REQUIRE(records.size() == 1100);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", mos_aggregate(records).mos);
  CHECK(std::string(buf) == "0.69");
}

TEST_CASE("annotation record json") {
  const auto r = rec("bob", 3, true, true, Category::Textural);
  const auto back = AnnotationRecord::from_json(r.to_json());
  CHECK(back.assessor_id == "bob");
  CHECK(back.direction_index == 3);
  CHECK(back.category == Category::Textural);
  CHECK(back.mark());
  CHECK_THROWS_AS(AnnotationRecord::from_json({{"assessor_id", "x"}}), Error);
  CHECK_THROWS_AS(parse_category("shape"), Error);
  CHECK(parse_category(to_string(Category::Coloring)) == Category::Coloring);
}

TEST_CASE("rank_values ordering and top mean") {
  auto r = rank_values({0.9, 0.6});
  CHECK(r.order == std::vector<int>{0, 1});
  CHECK(r.top == doctest::Approx(0.75));
  CHECK(r.mean == doctest::Approx(0.75));

  r = rank_values({0.6, 0.9, 0.7}, 2);
  CHECK(r.order == std::vector<int>{1, 2, 0});
  CHECK(r.top == doctest::Approx(0.8));

  r = rank_values({0.5, 0.5, 0.5, 0.5});
  CHECK(r.order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("dvn on a small null direction stays near chance") {
  OracleSpec spec;
  spec.seed = 7;
  const OracleGenerator g(spec);
  DvnConfig cfg;
  cfg.dataset_size = 400;
  cfg.classifier_steps = 20;
  cfg.classifier_batch = 16;
  cfg.seed = 5;
  Rng rng(6);
  std::vector<Image> real;
  for (const auto& z : sample_latent(400, 16, rng)) real.push_back(g.generate(z));
  const double v = evaluate_dvn(g, g.null_direction(), real, cfg);
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
  // 99.9% binomial band at n = 400
  CHECK(std::abs(v - 0.5) < 3.29 * std::sqrt(0.25 / 400));

  std::vector<Image> few(real.begin(), real.begin() + 10);
  try {
    (void)evaluate_dvn(g, g.null_direction(), few, cfg);
    FAIL("expected InsufficientData");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientData);
  }
  CHECK_THROWS_AS((void)evaluate_dvn(g, Eigen::VectorXd::Zero(16), real, cfg), Error);
  CHECK_THROWS_AS((void)evaluate_dvn(g, Eigen::VectorXd::Ones(5), real, cfg), Error);
}

TEST_CASE("shift dataset labels follow the sign of the shift") {
  OracleSpec spec;
  spec.identity_mixing = true;
  const OracleGenerator g(spec);
  DvnConfig cfg;
  cfg.dataset_size = 50;
  Rng rng(7);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(16);
  h(3) = 1.0;  // intensity
  const auto ds = build_shift_dataset(g, h, cfg, rng);
  REQUIRE(ds.images.size() == 50);
  int ones = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i) ones += ds.labels[i];
  CHECK(ones > 10);
  CHECK(ones < 40);
}

TEST_CASE("metrics report validation and json") {
  MetricsReport r;
  r.rca = 0.91;
  r.dvn_per_direction = {0.8, 0.6};
  r.dvn_mean = 0.7;
  r.category_rates = CategoryRates{0.45, 0.2, 0.35};
  r.validate();
  const auto j = r.to_json();
  CHECK(j.at("mos").is_null());
  const auto back = MetricsReport::from_json(j);
  CHECK(back.rca == r.rca);
  CHECK(!back.mos.has_value());
  CHECK(back.category_rates->textural == 0.35);

  MetricsReport bad;
  bad.rca = 1.2;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = MetricsReport{};
  bad.category_rates = CategoryRates{0.6, 0.3, 0.3};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("dvn config merge") {
  DvnConfig c;
  CHECK(c.shift_length == 6.0);
  CHECK(c.dataset_size == 3200);
  c.merge_json({{"dataset_size", 100}});
  CHECK(c.dataset_size == 100);
  c.dataset_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
