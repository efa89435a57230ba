#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "latentdirs/error.hpp"
#include "latentdirs/generator.hpp"

using namespace latentdirs;

namespace {

OracleGenerator identity_oracle() {
  OracleSpec spec;
  spec.identity_mixing = true;
  return OracleGenerator(spec);
}

LatentCode unit_shift(const Eigen::VectorXd& h, double s, LatentCode z) {
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += static_cast<float>(s * h(static_cast<Eigen::Index>(i)));
  return z;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a.pixels[i] - b.pixels[i])));
  return m;
}

}  // namespace

TEST_CASE("sample_latent is standard normal and reproducible") {
  Rng rng(1);
  const auto zs = sample_latent(10000, 8, rng);
  REQUIRE(zs.size() == 10000);
  for (int j = 0; j < 8; ++j) {
    double mean = 0;
    double sq = 0;
    for (const auto& z : zs) {
      mean += z[j];
      sq += static_cast<double>(z[j]) * z[j];
    }
    mean /= zs.size();
    const double var = sq / zs.size() - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
  }
  Rng again(1);
  CHECK(sample_latent(10000, 8, again) == zs);
}

TEST_CASE("oracle at z = 0 renders the canonical scene") {
  const auto g = identity_oracle();
  const LatentCode z(16, 0.0f);
  const auto s = g.scene(z);
  CHECK(s.center_x == 16.0);
  CHECK(s.center_y == 16.0);
  CHECK(s.scale == 1.0);
  CHECK(s.foreground == doctest::Approx(0.25));
  CHECK(s.background == doctest::Approx(0.5));
  const auto img = g.generate(z);
  CHECK(img.at(0, 16, 16) == doctest::Approx(0.25));
  CHECK(img.at(0, 0, 0) == doctest::Approx(0.5));
  for (float v : img.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("each factor responds linearly and saturates at its range") {
  const auto g = identity_oracle();
  LatentCode z(16, 0.0f);
  z[0] = 1.0f;
  CHECK(g.scene(z).center_x == doctest::Approx(18.0));
  z[0] = -3.0f;
  CHECK(g.scene(z).center_x == doctest::Approx(10.0));
  z[0] = 100.0f;
  CHECK(g.scene(z).center_x == doctest::Approx(25.0));
  z[0] = 0.0f;
  z[1] = 2.0f;
  CHECK(g.scene(z).center_y == doctest::Approx(20.0));
  z[1] = 0.0f;
  z[2] = 5.0f;
  CHECK(g.scene(z).scale == doctest::Approx(std::sqrt(1.2)));
  z[2] = 0.0f;
  z[3] = 2.0f;
  CHECK(g.scene(z).foreground == doctest::Approx(0.35));
  z[3] = 0.0f;
  z[4] = 20.0f;
  CHECK(g.scene(z).angle == doctest::Approx(std::numbers::pi / 3));
  z[4] = 0.0f;
  z[5] = -2.5f;
  CHECK(g.scene(z).background == doctest::Approx(0.3));
}

TEST_CASE("translation along pos_x moves the rendered shape by 2 px per unit") {
  const auto g = identity_oracle();
  LatentCode z(16, 0.0f);
  const auto base = g.generate(z);
  z[0] = 1.0f;
  const auto moved = g.generate(z);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x + 2 < 32; ++x) CHECK(moved.at(0, y, x + 2) == doctest::Approx(base.at(0, y, x)).epsilon(1e-6));
  }
}

TEST_CASE("mixed oracle: null directions leave images unchanged") {
  OracleSpec spec;
  spec.seed = 7;
  const OracleGenerator g(spec);
  Rng rng(3);
  const auto zs = sample_latent(20, 16, rng);
  for (int which = 0; which < 3; ++which) {
    const auto h = g.null_direction(which);
    CHECK(h.norm() == doctest::Approx(1.0));
    CHECK((g.ground_truth_directions().transpose() * h).cwiseAbs().maxCoeff() < 1e-9);
    for (const auto& z : zs) CHECK(max_abs_diff(g.generate(z), g.generate(unit_shift(h, 5.0, z))) < 1e-5);
  }
}

TEST_CASE("ground-truth directions are orthonormal and separable") {
  OracleSpec spec;
  spec.seed = 7;
  const OracleGenerator g(spec);
  const auto gt = g.ground_truth_directions();
  REQUIRE(gt.rows() == 16);
  REQUIRE(gt.cols() == 6);
  CHECK((gt.transpose() * gt - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-9);

  Rng rng(4);
  const auto z = sample_latent(1, 16, rng)[0];
  const auto base = g.scene(z);
  for (int i = 0; i < 6; ++i) {
    const auto role = spec.roles[static_cast<std::size_t>(i)];
    CAPTURE(to_string(role));
    CHECK((g.role_direction(role) - gt.col(i)).norm() < 1e-12);
    const auto s = g.scene(unit_shift(gt.col(i), 0.5, z));
    const int changed = (s.center_x != doctest::Approx(base.center_x)) + (s.center_y != doctest::Approx(base.center_y)) +
                        (s.scale != doctest::Approx(base.scale)) + (s.foreground != doctest::Approx(base.foreground)) +
                        (s.angle != doctest::Approx(base.angle)) + (s.background != doctest::Approx(base.background));
    CHECK(changed <= 1);
  }
}

TEST_CASE("background direction whitens the background without touching the shape") {
  OracleSpec spec;
  spec.seed = 7;
  const OracleGenerator g(spec);
  const auto h = g.background_direction();
  const LatentCode z(16, 0.0f);
  const auto up = g.scene(unit_shift(h, 6.0, z));
  const auto down = g.scene(unit_shift(h, -6.0, z));
  const auto base = g.scene(z);
  CHECK(up.background >= 0.97);
  CHECK(std::abs(up.foreground - base.foreground) < 0.02);
  CHECK(down.background < base.background);
  const auto img = g.generate(unit_shift(h, 6.0, z));
  CHECK(img.at(0, 0, 0) >= 0.97f);
  CHECK(img.at(0, 16, 16) == doctest::Approx(base.foreground).epsilon(0.02));
}

TEST_CASE("class-conditional oracle renders the four shape types") {
  OracleSpec spec;
  spec.num_classes = 8;
  const OracleGenerator g(spec);
  const LatentCode z(16, 0.0f);
  CHECK(g.scene(z, 5).shape == 1);
  CHECK(g.scene(z, 3).shape == 3);
  CHECK(max_abs_diff(g.generate(z, 1), g.generate(z, 5)) == 0.0);
  CHECK(max_abs_diff(g.generate(z, 0), g.generate(z, 1)) > 0.1);
  CHECK_THROWS_AS((void)g.generate(z), Error);
  CHECK_THROWS_AS((void)g.generate(z, 8), Error);
  CHECK_THROWS_AS((void)identity_oracle().generate(z, 0), Error);
}

TEST_CASE("foreground mask is the support of the coverage") {
  const auto g = identity_oracle();
  const LatentCode z(16, 0.0f);
  const auto cov = g.coverage(z);
  const auto mask = g.foreground_mask(z);
  for (std::size_t i = 0; i < cov.size(); ++i) CHECK(mask[i] == (cov[i] > 0 ? 1 : 0));
  // 12 x 8 rectangle centred on a pixel corner
  int area = 0;
  for (auto m : mask) area += m;
  CHECK(area == 96);
}

TEST_CASE("oracle vjp agrees with differences taken along latent axes") {
  OracleSpec spec;
  spec.seed = 7;
  const OracleGenerator g(spec);
  const FunctionGenerator plain(16, spec.image, 0, [&](std::span<const float> z, std::optional<int>) { return g.generate(z); });
  // The rendered coverage is piecewise linear, so the two stencils only agree
  // up to the pixels whose ramp kinks fall inside the step.
  Rng rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (const auto& z : sample_latent(5, 16, rng)) {
    Image grad(spec.image);
    for (auto& v : grad.pixels) v = n(rng);
    const auto fast = g.vjp(z, std::nullopt, grad);
    const auto slow = plain.vjp(z, std::nullopt, grad);
    double diff = 0;
    double norm = 0;
    for (int i = 0; i < 16; ++i) {
      diff += std::pow(fast[i] - slow[i], 2);
      norm += std::pow(slow[i], 2);
    }
    CHECK(std::sqrt(diff / norm) < 0.05);
  }
}

TEST_CASE("checksum identifies the oracle parameters") {
  OracleSpec a;
  OracleSpec b;
  b.seed = 1;
  CHECK(OracleGenerator(a).parameter_checksum() == OracleGenerator(a).parameter_checksum());
  CHECK(OracleGenerator(a).parameter_checksum() != OracleGenerator(b).parameter_checksum());
}

TEST_CASE("oracle spec validation and json round-trip") {
  OracleSpec spec;
  spec.num_classes = 4;
  spec.seed = 9;
  const auto back = OracleSpec::from_json(spec.to_json());
  CHECK(back.seed == 9);
  CHECK(back.num_classes == 4);
  CHECK(back.roles == spec.roles);
  OracleSpec bad;
  bad.latent_dim = 4;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = OracleSpec{};
  bad.roles = {FactorRole::PosX, FactorRole::PosX};
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(parse_factor_role("hue"), Error);
  CHECK_THROWS_AS((void)OracleGenerator(OracleSpec{}).generate(LatentCode(15, 0.0f)), Error);
}

TEST_CASE("function adapter enforces the image contract") {
  const FunctionGenerator ok(2, ImageShape{1, 4, 4}, 0, [](std::span<const float> z, std::optional<int>) {
    return Image(ImageShape{1, 4, 4}, 0.5f + z[0]);
  });
  CHECK(ok.generate(LatentCode{2.0f, 0.0f}).pixels[0] == 1.0f);  // clamped
  const FunctionGenerator wrong(2, ImageShape{1, 4, 4}, 0, [](std::span<const float>, std::optional<int>) {
    return Image(ImageShape{1, 3, 3});
  });
  CHECK_THROWS_AS((void)wrong.generate(LatentCode{0.0f, 0.0f}), Error);
  const FunctionGenerator nan(2, ImageShape{1, 4, 4}, 0, [](std::span<const float>, std::optional<int>) {
    return Image(ImageShape{1, 4, 4}, std::nanf(""));
  });
  try {
    (void)nan.generate(LatentCode{0.0f, 0.0f});
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
  }
}

TEST_CASE("external adapter runs a subprocess per request") {
  const auto dir = std::filesystem::temp_directory_path() / "ld_test_external";
  std::filesystem::create_directories(dir);
  {
    std::ofstream py(dir / "gen.py");
    py << "import struct, sys\n"
          "data = open(sys.argv[1], 'rb').read()\n"
          "n, d = struct.unpack_from('<II', data, 0)\n"
          "zs = struct.unpack_from('<%df' % (n * d), data, 8)\n"
          "out = []\n"
          "for i in range(n):\n"
          "    v = min(max(0.5 + 0.1 * zs[i * d], 0.0), 1.0)\n"
          "    out += [v] * 16\n"
          "open(sys.argv[2], 'wb').write(struct.pack('<%df' % len(out), *out))\n";
  }
  io::write_json(dir / "adapter.json",
                 {{"command", "python3 " + (dir / "gen.py").string()}, {"latent_dim", 3}, {"height", 4}, {"width", 4}});
  const ExternalGenerator g(dir / "adapter.json");
  CHECK(g.latent_dim() == 3);
  const auto img = g.generate(LatentCode{1.0f, 0.0f, 0.0f});
  CHECK(img.pixels[5] == doctest::Approx(0.6f));
  const Image ones(ImageShape{1, 4, 4}, 1.0f);
  const auto grad = g.vjp(LatentCode{0.0f, 0.0f, 0.0f}, std::nullopt, ones);
  CHECK(grad[0] == doctest::Approx(1.6).epsilon(1e-3));
  CHECK(grad[1] == doctest::Approx(0.0).scale(1.0));

  io::write_json(dir / "broken.json", {{"command", "false"}, {"latent_dim", 3}, {"height", 4}, {"width", 4}});
  CHECK_THROWS_AS((void)ExternalGenerator(dir / "broken.json").generate(LatentCode(3, 0.0f)), Error);
  io::write_json(dir / "malformed.json", {{"latent_dim", 3}});
  CHECK_THROWS_AS((void)ExternalGenerator(dir / "malformed.json"), Error);
}
