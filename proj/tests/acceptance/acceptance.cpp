// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Optional arguments select criteria by name substring.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "latentdirs/annotation_service.hpp"
#include "latentdirs/charts.hpp"
#include "latentdirs/metrics.hpp"
#include "latentdirs/saliency.hpp"
#include "latentdirs/trainer.hpp"
#include "support/gradcheck.hpp"

#ifndef LD_FIXTURES_DIR
#error "LD_FIXTURES_DIR must point at tests/fixtures"
#endif

using namespace latentdirs;

namespace {

// Thresholds.
constexpr int kOrthoSeeds = 100;
constexpr double kOrthoTol = 1e-5;
constexpr double kSeriesTol = 1e-6;
constexpr double kOrthoSeconds = 10.0;
constexpr double kLossTol = 1e-4;
constexpr double kGradTol = 1e-3;
constexpr double kRecoveryMin = 0.85;
constexpr double kRandomRecoveryMax = 0.6;
constexpr double kRecoverySeconds = 600.0;
constexpr double kRcaGap = 0.10;
constexpr double kRcaMin = 0.9;
constexpr int kRcaSeeds = 5;
constexpr int kRcaSeedsNeeded = 4;
constexpr double kAblationRatio = 3.0;
constexpr double kCollapseDistance = 0.02;
constexpr int kDvnSize = 3200;
constexpr double kDvnZ99 = 2.576;
constexpr double kDvnIntensityMin = 0.9;
constexpr double kIouMin = 0.95;
constexpr double kMaeMax = 0.05;
constexpr int kSegTrain = 500;
constexpr int kSegHeldOut = 100;
constexpr double kSaliencySeconds = 900.0;

// Desk oracle: d = 16, m = 6 mixed factors.
constexpr int kLatentDim = 16;
constexpr int kFactors = 6;
constexpr int kDirections = 8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const OracleGenerator& oracle() {
  static const OracleGenerator g{OracleSpec{}};
  return g;
}

TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.num_directions = kDirections;
  cfg.seed = seed;
  return cfg;
}

// The seed-0 desk run is shared by several criteria.
struct LearnedRun {
  TrainResult result;
  double seconds = 0;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

const LearnedRun& learned_run() {
  static const LearnedRun run = [] {
    const auto before = oracle().parameter_checksum();
    const auto t0 = std::chrono::steady_clock::now();
    auto result = train(oracle(), desk_config(0));
    const double t = seconds_since(t0);
    return LearnedRun{std::move(result), t, before, oracle().parameter_checksum()};
  }();
  return run;
}

DirectionMatrix random_orthonormal_a(std::uint64_t seed) {
  Rng rng(seed);
  return DirectionMatrix::from_columns(random_orthogonal(kLatentDim, rng).leftCols(kDirections));
}

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

Outcome orthonormal_parametrization() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_ortho = 0;
  double worst_series = 0;
  for (int seed = 0; seed < kOrthoSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const int d = 2 + seed % (kLatentDim - 1);
    const int k = 1 + std::uniform_int_distribution<int>(0, d - 1)(rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<float> params;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
    for (int i = 1; i < d; ++i) {
      for (int j = 0; j < i; ++j) {
        const float v = static_cast<float>(u(rng));
        params.push_back(v);
        s(i, j) = v;
        s(j, i) = -v;
      }
    }
    const Eigen::MatrixXd a = DirectionMatrix::from_skew_params(d, k, params).effective();
    const Eigen::MatrixXd gram = a.transpose() * a - Eigen::MatrixXd::Identity(k, k);
    worst_ortho = std::max(worst_ortho, gram.cwiseAbs().maxCoeff());
    worst_series = std::max(worst_series, (skew_exponential(s) - series_exp(s)).cwiseAbs().maxCoeff());
  }
  const double t = seconds_since(t0);
  return {worst_ortho < kOrthoTol && worst_series < kSeriesTol && t < kOrthoSeconds,
          fmt("max|A^T A - I| %.2e, max|exp - series| %.2e, %.2fs", worst_ortho, worst_series, t)};
}

Outcome loss_suite() {
  bool ok = true;
  const auto uniform = reconstruction_loss(NetOutput{std::vector<float>(4, 0.3f), 2.0f}, 1, 2.0, 0.25);
  ok &= std::abs(uniform.classification - 1.3863) < kLossTol && uniform.regression == 0.0;
  const auto weighted = reconstruction_loss(NetOutput{{5.0f, 0.0f, 0.0f, 0.0f}, 1.0f}, 0, 2.0, 0.25);
  ok &= std::abs(weighted.classification - 0.0200) < kLossTol;
  ok &= std::abs(weighted.total - 0.2700) < kLossTol;
  const std::vector<std::pair<double, double>> clamp_table{{0.1, 0.5}, {-0.2, -0.5}, {3.0, 3.0},
                                                           {-6.0, -6.0}, {0.5, 0.5}, {0.0, 0.5}};
  for (const auto& [in, out] : clamp_table) ok &= clamp_epsilon(in, 0.5) == out;
  return {ok, fmt("ln4 case %.4f, weighted total %.4f", uniform.classification, weighted.total)};
}

Outcome gradient_check() {
  double worst = 0;
  std::size_t kinks = 0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = ldtest::reconstructor_gradcheck(seed);
    worst = std::max(worst, r.relative_error);
    kinks += r.kinks;
    params += r.params;
  }
  return {worst < kGradTol && kinks * 10 <= params,
          fmt("max relative error %.2e over 5 seeds (%zu of %zu entries skipped at kinks)", worst, kinks, params)};
}

Outcome direction_recovery() {
  const auto& run = learned_run();
  const auto gt = oracle().ground_truth_directions();
  const double learned = direction_recovery_score(run.result.directions, gt).mean_abs_cosine;
  Rng rng(12345);
  double random = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const Eigen::MatrixXd a = random_orthogonal(kLatentDim, rng).leftCols(kDirections);
    random += direction_recovery_score(a, gt).mean_abs_cosine;
  }
  random /= trials;
  return {learned >= kRecoveryMin && random < kRandomRecoveryMax && run.seconds < kRecoverySeconds,
          fmt("learned %.3f (need >= %.2f), random baseline %.3f, training %.0fs", learned, kRecoveryMin, random,
              run.seconds)};
}

Outcome rca_gap() {
  int held = 0;
  std::string detail;
  for (int seed = 0; seed < kRcaSeeds; ++seed) {
    const auto cfg = desk_config(static_cast<std::uint64_t>(seed));
    const auto learned_a = seed == 0 ? learned_run().result.directions : train(oracle(), cfg).directions;
    const double learned = evaluate_rca(oracle(), learned_a, cfg);
    const double random = evaluate_rca(oracle(), random_orthonormal_a(static_cast<std::uint64_t>(seed) + 1), cfg);
    const bool ok = learned - random >= kRcaGap && learned >= kRcaMin;
    held += ok ? 1 : 0;
    detail += fmt("%sseed %d: %.3f vs %.3f", seed ? "; " : "", seed, learned, random);
    std::printf("  rca seed %d learned %.4f random %.4f\n", seed, learned, random);
    std::fflush(stdout);
  }
  return {held >= kRcaSeedsNeeded, fmt("%d of %d seeds hold (", held, kRcaSeeds) + detail + ")"};
}

// Mean pixel distance of the +-6 shifted images of direction k to their
// common mean image, over a fixed set of z.
double collapse_distance(const Eigen::MatrixXd& a, int k) {
  Rng rng(99);
  const auto zs = sample_latent(32, kLatentDim, rng);
  std::vector<Image> shifted;
  for (const auto& z : zs) {
    for (double s : {-6.0, 6.0}) shifted.push_back(oracle().generate(DirectionMatrix::apply_shift(a, z, k, s)));
  }
  std::vector<double> mean(shifted.front().pixels.size(), 0.0);
  for (const auto& im : shifted) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += im.pixels[i] / static_cast<double>(shifted.size());
  }
  double dist = 0;
  for (const auto& im : shifted) {
    double d = 0;
    for (std::size_t i = 0; i < mean.size(); ++i) d += std::abs(im.pixels[i] - mean[i]);
    dist += d / static_cast<double>(mean.size());
  }
  return dist / static_cast<double>(shifted.size());
}

Outcome lambda_ablation() {
  auto cfg = desk_config(0);
  cfg.lambda = 0.0;
  const auto collapsed = train(oracle(), cfg);
  const double err0 = collapsed.history.back().running_regression;
  const double err25 = learned_run().result.history.back().running_regression;
  const auto a = collapsed.directions.effective();
  double closest = 1e9;
  for (int k = 0; k < a.cols(); ++k) closest = std::min(closest, collapse_distance(a, k));
  const bool ratio_ok = err0 >= kAblationRatio * err25;
  const bool collapse_ok = closest < kCollapseDistance;
  return {ratio_ok || collapse_ok,
          fmt("regression error %.3f at lambda 0 vs %.3f at 0.25 (ratio %.1f); closest collapse distance %.3f", err0,
              err25, err0 / err25, closest)};
}

Outcome dvn_properties() {
  Rng rng(7919);
  const auto zs = sample_latent(kDvnSize, kLatentDim, rng);
  std::vector<Image> real(zs.size());
  nn::parallel_for(zs.size(), [&](std::size_t i) { real[i] = oracle().generate(zs[i]); });
  DvnConfig cfg;
  cfg.dataset_size = kDvnSize;

  const double null_dvn = evaluate_dvn(oracle(), oracle().null_direction(), real, cfg);
  const double band = kDvnZ99 * std::sqrt(0.25 / kDvnSize);
  const double intensity = evaluate_dvn(oracle(), oracle().role_direction(FactorRole::Intensity), real, cfg);
  const auto learned = dvn_rank(oracle(), learned_run().result.directions, real, cfg, kFactors);
  const auto random = dvn_rank(oracle(), random_orthonormal_a(1), real, cfg, kFactors);
  for (const auto* r : {&learned, &random}) {
    std::printf("  dvn %s:", r == &learned ? "learned" : "random ");
    for (double v : r->per_direction) std::printf(" %.3f", v);
    std::printf("\n");
  }
  const bool ok = std::abs(null_dvn - 0.5) <= band && intensity >= kDvnIntensityMin && learned.top >= random.top;
  return {ok, fmt("null %.4f (band 0.5 +- %.4f), intensity %.4f, top-%d learned %.4f vs random %.4f", null_dvn, band,
                  intensity, kFactors, learned.top, random.top)};
}

Outcome generator_frozen() {
  const auto& run = learned_run();
  return {run.checksum_before == run.checksum_after,
          fmt("checksum %016llx before, %016llx after", static_cast<unsigned long long>(run.checksum_before),
              static_cast<unsigned long long>(run.checksum_after))};
}

Outcome saliency_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  OracleSpec spec;
  spec.seed = 7;
  spec.num_classes = 4;
  const OracleGenerator g(spec);
  const auto h = g.background_direction();
  auto cfg = SegmenterConfig::desk();

  OracleClassStub stub(g.num_classes());
  Rng rng(17);
  std::vector<Image> probe;
  for (int i = 0; i < 200; ++i) {
    const int c = std::uniform_int_distribution<int>(0, g.num_classes() - 1)(rng);
    probe.push_back(g.generate(sample_latent(1, kLatentDim, rng).front(), c));
    stub.remember(probe.back(), c);
  }
  const auto classes = select_classes(std::cref(stub), probe, g.num_classes(), cfg);

  double iou = 0;
  double worst = 1;
  const int probes = 500;
  for (int i = 0; i < probes; ++i) {
    const auto z = sample_latent(1, kLatentDim, rng).front();
    const int c = i % g.num_classes();
    const double v = mask_iou(synth_mask(g, z, c, h, cfg.theta, cfg.shift).mask, g.foreground_mask(z, c));
    iou += v;
    worst = std::min(worst, v);
  }
  iou /= probes;

  const auto train_set = build_saliency_dataset(g, classes, h, cfg, kSegTrain, 1);
  // Held-out samples carry the analytic foreground mask, filtered by the same area range.
  std::vector<MaskSample> held_out;
  Rng held_rng(2);
  while (static_cast<int>(held_out.size()) < kSegHeldOut) {
    const auto z = sample_latent(1, kLatentDim, held_rng).front();
    const int c = classes[std::uniform_int_distribution<std::size_t>(0, classes.size() - 1)(held_rng)];
    MaskSample s{g.generate(z, c), g.foreground_mask(z, c), c};
    if (s.area() >= cfg.area_min && s.area() <= cfg.area_max) held_out.push_back(std::move(s));
  }
  const auto res = train_segmenter(train_set.samples, cfg);
  const double mae = evaluate_mae(res.model, held_out);
  const double t = seconds_since(t0);
  return {iou >= kIouMin && mae <= kMaeMax && t < kSaliencySeconds,
          fmt("mean IoU %.4f (worst %.4f), train pixel acc %.4f, held-out MAE %.4f, %.0fs", iou, worst,
              res.final_pixel_accuracy, mae, t)};
}

Outcome annotation_fixtures() {
  bool ok = true;
  const auto rates = mos_aggregate(AnnotationStore::read_latest(LD_FIXTURES_DIR "/category_rates.jsonl"));
  ok &= std::abs(rates.mos - 0.8) < 1e-12;
  ok &= std::abs(rates.rates.geometry - 0.45) < 1e-12 && std::abs(rates.rates.coloring - 0.2) < 1e-12 &&
        std::abs(rates.rates.textural - 0.35) < 1e-12;
  const auto eleven = mos_aggregate(AnnotationStore::read_latest(LD_FIXTURES_DIR "/eleven_assessors.jsonl"));
  ok &= fmt("%.2f", eleven.mos) == "0.69";
  const std::vector<int> counts{9, 7, 7, 3, 1, 0, 0, 0};
  ok &= select_from_counts(counts, 0.25) == std::vector<int>{0, 1};
  return {ok, fmt("rates (%.2f, %.2f, %.2f), eleven-assessor MOS %.2f", rates.rates.geometry, rates.rates.coloring,
                  rates.rates.textural, eleven.mos)};
}

Outcome reproducibility() {
  auto cfg = desk_config(3);
  cfg.steps = 200;
  const auto one = train(oracle(), cfg);
  const auto two = train(oracle(), cfg);
  ChartSpec spec;
  spec.direction = 2;
  const auto png_one = encode_png(render_chart(oracle(), one.directions, spec).tiled());
  const auto png_two = encode_png(render_chart(oracle(), two.directions, spec).tiled());
  const bool same_history = one.history == two.history;
  return {same_history && png_one == png_two,
          fmt("histories %s, chart PNGs %s (%zu bytes)", same_history ? "identical" : "differ",
              png_one == png_two ? "identical" : "differ", png_one.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"orthonormal-parametrization", orthonormal_parametrization},
      {"loss-suite", loss_suite},
      {"gradient-check", gradient_check},
      {"annotation-fixtures", annotation_fixtures},
      {"direction-recovery", direction_recovery},
      {"generator-frozen", generator_frozen},
      {"reproducibility", reproducibility},
      {"lambda-ablation", lambda_ablation},
      {"dvn-properties", dvn_properties},
      {"saliency-end-to-end", saliency_end_to_end},
      {"rca-gap", rca_gap},
  };
  int failed = 0;
  int ran = 0;
  for (const auto& [name, run] : criteria) {
    bool selected = argc < 2;
    for (int i = 1; i < argc; ++i) selected |= name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    ++ran;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s  %s  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
