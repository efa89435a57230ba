#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "latentdirs/direction_space.hpp"
#include "latentdirs/error.hpp"

using namespace latentdirs;

namespace {

// Plain Taylor series without scaling; the term count is chosen so that
// ||S||^n / n! < 1e-12 at the first omitted term.
Eigen::MatrixXd series_exp(const Eigen::MatrixXd& s) {
  const double norm = s.lpNorm<1>();
  int n = 1;
  double bound = norm;
  while (bound >= 1e-12 || n < 4) {
    ++n;
    bound *= norm / n;
  }
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(s.rows(), s.cols());
  Eigen::MatrixXd sum = term;
  for (int i = 1; i <= n + 1; ++i) {
    term = term * s / static_cast<double>(i);
    sum += term;
  }
  return sum;
}

Eigen::MatrixXd random_skew(int d, Rng& rng, double range = 1.0) {
  std::uniform_real_distribution<double> u(-range, range);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < i; ++j) {
      s(i, j) = u(rng);
      s(j, i) = -s(i, j);
    }
  }
  return s;
}

std::vector<float> skew_to_params(const Eigen::MatrixXd& s) {
  std::vector<float> p;
  for (int i = 1; i < s.rows(); ++i) {
    for (int j = 0; j < i; ++j) p.push_back(static_cast<float>(s(i, j)));
  }
  return p;
}

}  // namespace

TEST_CASE("skew_exponential closed forms") {
  CHECK(skew_exponential(Eigen::MatrixXd::Zero(3, 3)).isApprox(Eigen::MatrixXd::Identity(3, 3)));

  const double t = std::numbers::pi / 2;
  Eigen::MatrixXd s(2, 2);
  s << 0, -t, t, 0;
  Eigen::MatrixXd expected(2, 2);
  expected << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  CHECK((skew_exponential(s) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("skew_exponential agrees with the truncated series") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + trial % 7;
    const auto s = random_skew(d, rng);
    const auto q = skew_exponential(s);
    CHECK((q - series_exp(s)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(q.determinant() > 0);
  }
  // d = 5 with entries in [-1, 1]
  const auto s5 = random_skew(5, rng);
  const auto q5 = skew_exponential(s5);
  CHECK((q5.transpose() * q5 - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("scaling and squaring stays accurate for large norms") {
  Rng rng(12);
  const auto s = random_skew(6, rng, 8.0);
  const auto q = skew_exponential(s);
  CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-9);
  // exp(S) exp(-S) = I
  CHECK((q * skew_exponential(-s) - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("skew_exponential rejects non-skew input") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
  try {
    (void)skew_exponential(m);
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
  }
}

TEST_CASE("exp_gradient matches finite differences of <G, exp(S)>") {
  Rng rng(13);
  const int d = 5;
  const auto s = random_skew(d, rng);
  Eigen::MatrixXd g = Eigen::MatrixXd::Random(d, d);
  const auto analytic = exp_gradient(s, g);
  const double h = 1e-6;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      Eigen::MatrixXd sp = s;
      Eigen::MatrixXd sm = s;
      sp(i, j) += h;
      sm(i, j) -= h;
      const double fd = ((g.cwiseProduct(matrix_exponential(sp))).sum() - (g.cwiseProduct(matrix_exponential(sm))).sum()) / (2 * h);
      CHECK(analytic(i, j) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("effective matrix examples") {
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(4, 1);
  cols(0, 0) = 3;
  cols(1, 0) = 4;
  const auto a = DirectionMatrix::from_columns(cols).effective();
  CHECK(a(0, 0) == doctest::Approx(0.6));
  CHECK(a(1, 0) == doctest::Approx(0.8));
  CHECK(a(2, 0) == 0.0);

  const auto ortho = DirectionMatrix::identity(DirectionMode::Orthonormal, 6, 3).effective();
  CHECK(ortho.isApprox(Eigen::MatrixXd::Identity(6, 6).leftCols(3)));

  const auto rot = DirectionMatrix::from_skew_params(2, 2, {static_cast<float>(std::numbers::pi / 2)}).effective();
  CHECK(rot(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(rot(1, 0) == doctest::Approx(1.0));
  CHECK(rot(0, 1) == doctest::Approx(-1.0));
  CHECK(rot(1, 1) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("degenerate unit-norm column is an error") {
  Eigen::MatrixXd cols = Eigen::MatrixXd::Identity(3, 2);
  cols.col(1).setZero();
  try {
    (void)DirectionMatrix::from_columns(cols).effective();
    FAIL("expected a degenerate-column error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateColumn);
  }
}

TEST_CASE("column norms and orthonormality hold for random raw parameters") {
  Rng rng(14);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 3 + trial % 10;
    const int k = 1 + trial % d;
    for (auto mode : {DirectionMode::UnitNorm, DirectionMode::Orthonormal}) {
      const auto a = DirectionMatrix::random(mode, d, k, rng, 2.0).effective();
      for (int j = 0; j < k; ++j) CHECK(a.col(j).norm() == doctest::Approx(1.0).epsilon(1e-5));
      if (mode == DirectionMode::Orthonormal) {
        CHECK((a.transpose() * a - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-5);
      }
    }
  }
}

TEST_CASE("orthonormal mode requires K <= d") {
  CHECK_THROWS_AS(DirectionMatrix::identity(DirectionMode::Orthonormal, 3, 4), Error);
}

TEST_CASE("apply_shift examples and properties") {
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(5, 2);
  cols(0, 0) = 1;
  cols(1, 1) = 1;
  const auto a = DirectionMatrix::from_columns(cols);
  const LatentCode zero(5, 0.0f);
  const auto shifted = a.apply_shift(zero, 0, 2.0);
  CHECK(shifted == LatentCode{2, 0, 0, 0, 0});

  Rng rng(15);
  const auto r = DirectionMatrix::random(DirectionMode::UnitNorm, 8, 4, rng);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    LatentCode z(8);
    for (auto& v : z) v = n(rng);
    CHECK(r.apply_shift(z, 2, 0.0) == z);
    const double e1 = 1.7 - trial * 0.3;
    const double e2 = -0.4 + trial * 0.1;
    const auto moved = r.apply_shift(z, trial % 4, e1);
    double dist = 0;
    for (int i = 0; i < 8; ++i) dist += std::pow(moved[i] - z[i], 2);
    CHECK(std::sqrt(dist) == doctest::Approx(std::abs(e1)).epsilon(1e-5));
    // linear in epsilon
    const auto lhs_a = r.apply_shift(z, trial % 4, e1);
    const auto lhs_b = r.apply_shift(LatentCode(8, 0.0f), trial % 4, e2);
    const auto rhs = r.apply_shift(z, trial % 4, e1 + e2);
    for (int i = 0; i < 8; ++i) CHECK(lhs_a[i] + lhs_b[i] == doctest::Approx(rhs[i]).epsilon(1e-5));
  }
  CHECK_THROWS_AS((void)r.apply_shift(LatentCode(8, 0.0f), 4, 1.0), Error);
  CHECK_THROWS_AS((void)r.apply_shift(LatentCode(8, 0.0f), -1, 1.0), Error);
  CHECK_THROWS_AS((void)r.apply_shift(LatentCode(7, 0.0f), 0, 1.0), Error);
}

TEST_CASE("backprop matches finite differences in both modes") {
  Rng rng(16);
  for (auto mode : {DirectionMode::UnitNorm, DirectionMode::Orthonormal}) {
    CAPTURE(to_string(mode));
    auto a = DirectionMatrix::random(mode, 5, 3, rng, 0.7);
    const Eigen::MatrixXd g = Eigen::MatrixXd::Random(5, 3);
    const auto analytic = a.backprop(g);
    auto raw = a.raw_params();
    REQUIRE(analytic.size() == raw.size());
    const float h = 1e-3f;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const float keep = raw[i];
      raw[i] = keep + h;
      const double up = g.cwiseProduct(a.effective()).sum();
      raw[i] = keep - h;
      const double down = g.cwiseProduct(a.effective()).sum();
      raw[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      CHECK(analytic[i] == doctest::Approx(fd).epsilon(2e-3).scale(1.0));
    }
  }
}

TEST_CASE("direction matrix round-trips through its container") {
  Rng rng(17);
  const auto dir = std::filesystem::temp_directory_path() / "ld_test_dirs";
  std::filesystem::create_directories(dir);
  for (auto mode : {DirectionMode::UnitNorm, DirectionMode::Orthonormal}) {
    auto a = DirectionMatrix::random(mode, 6, 4, rng);
    a.set_seed(99);
    const auto path = dir / (std::string(to_string(mode)) + ".bin");
    a.save(path);
    const auto b = DirectionMatrix::load(path);
    CHECK(b.mode() == mode);
    CHECK(b.latent_dim() == 6);
    CHECK(b.num_directions() == 4);
    CHECK(b.seed() == 99);
    CHECK(std::equal(a.raw_params().begin(), a.raw_params().end(), b.raw_params().begin()));
    CHECK(a.effective() == b.effective());
  }
  CHECK_THROWS_AS(DirectionMatrix::load(dir / "missing.bin"), Error);
}

TEST_CASE("skew params map to the leading columns of exp(S)") {
  Rng rng(18);
  const auto s = random_skew(6, rng);
  const auto a = DirectionMatrix::from_skew_params(6, 4, skew_to_params(s));
  CHECK((a.skew_matrix() - s).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.effective() - series_exp(s).leftCols(4)).cwiseAbs().maxCoeff() < 1e-5);
}
