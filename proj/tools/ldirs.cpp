// Command-line front end: train, evaluate, chart, saliency, serve, report.
// Each command reads an optional flat JSON config, applies flag overrides and
// writes the resolved config next to its outputs.

#include <cstdio>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "latentdirs/annotation_service.hpp"
#include "latentdirs/charts.hpp"
#include "latentdirs/error.hpp"
#include "latentdirs/metrics.hpp"
#include "latentdirs/saliency.hpp"
#include "latentdirs/trainer.hpp"

using namespace latentdirs;
namespace fs = std::filesystem;

namespace {

struct GeneratorArgs {
  std::string generator = "oracle";
  std::string oracle_spec;  // JSON file

  void add(CLI::App* app) {
    app->add_option("--generator", generator, "'oracle' or an adapter descriptor JSON");
    app->add_option("--oracle-spec", oracle_spec, "oracle spec JSON (seed, latent_dim, roles, image, num_classes)");
  }

  // Config keys "generator" and "oracle" fill in values not given as flags.
  void merge(const io::Json& cfg, CLI::App* app) {
    if (cfg.contains("generator") && app->count("--generator") == 0) generator = cfg.at("generator").get<std::string>();
    if (cfg.contains("oracle_spec") && app->count("--oracle-spec") == 0) oracle_spec = cfg.at("oracle_spec").get<std::string>();
    if (cfg.contains("oracle") && oracle_spec.empty()) inline_spec = cfg.at("oracle");
  }

  [[nodiscard]] OracleSpec spec() const {
    if (!oracle_spec.empty()) return OracleSpec::from_json(io::read_json(oracle_spec));
    if (!inline_spec.is_null()) return OracleSpec::from_json(inline_spec);
    return {};
  }

  [[nodiscard]] std::unique_ptr<Generator> make() const {
    if (generator == "oracle") return std::make_unique<OracleGenerator>(spec());
    return std::make_unique<ExternalGenerator>(generator);
  }

  [[nodiscard]] io::Json to_json() const {
    io::Json j = {{"generator", generator}};
    if (generator == "oracle") j["oracle"] = spec().to_json();
    return j;
  }

  io::Json inline_spec;
};

io::Json load_config(const std::string& path) {
  if (path.empty()) return io::Json::object();
  auto j = io::read_json(path);
  if (!j.is_object()) throw Error(ErrorKind::Validation, "config must be a JSON object");
  return j;
}

fs::path output_dir_of(const fs::path& out) {
  return out.has_extension() ? (out.has_parent_path() ? out.parent_path() : fs::path(".")) : out;
}

void echo_config(const fs::path& dir, const io::Json& resolved) {
  fs::create_directories(dir);
  io::write_json(dir / "resolved_config.json", resolved);
}

const OracleGenerator& require_oracle(const Generator& g, const char* what) {
  const auto* o = dynamic_cast<const OracleGenerator*>(&g);
  if (!o) throw Error(ErrorKind::Unsupported, std::string(what) + " needs the oracle generator");
  return *o;
}

std::vector<Image> sample_real_images(const Generator& g, int n, std::uint64_t seed) {
  Rng rng(seed);
  const auto zs = sample_latent(static_cast<std::size_t>(n), g.latent_dim(), rng);
  std::vector<std::optional<int>> cs(zs.size());
  if (g.class_conditional()) {
    for (auto& c : cs) c = std::uniform_int_distribution<int>(0, g.num_classes() - 1)(rng);
  }
  std::vector<Image> out(zs.size());
  nn::parallel_for(zs.size(), [&](std::size_t i) { out[i] = g.generate(zs[i], cs[i]); });
  return out;
}

MetricsReport load_report_or_empty(const fs::path& path) {
  if (fs::exists(path)) return MetricsReport::from_json(io::read_json(path));
  return {};
}

// ---- train ---------------------------------------------------------------

struct TrainCmd {
  std::string config;
  GeneratorArgs gen;
  TrainConfig cfg;
  std::string a_mode;
  std::string out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("train", "jointly learn directions and the reconstructor");
    app->add_option("--config", config, "flat JSON config");
    gen.add(app);
    app->add_option("--k", cfg.num_directions, "number of directions K");
    app->add_option("--lambda", cfg.lambda, "regression weight");
    app->add_option("--steps", cfg.steps);
    app->add_option("--batch", cfg.batch_size);
    app->add_option("--lr", cfg.learning_rate);
    app->add_option("--a-mode", a_mode, "unit_norm | orthonormal | linear");
    app->add_option("--seed", cfg.seed);
    app->add_option("--arch", cfg.architecture, "lenet | tiny");
    app->add_option("--checkpoint-every", cfg.checkpoint_every);
    app->add_option("--out", out, "output directory")->required();
    app->callback([this, app] { run(app); });
  }

  void run(CLI::App* app) {
    const auto file = load_config(config);
    TrainConfig flags = cfg;
    cfg = TrainConfig{};
    cfg.merge_json(file);
    auto take = [&](const char* flag, auto member) {
      if (app->count(flag) > 0) cfg.*member = flags.*member;
    };
    take("--k", &TrainConfig::num_directions);
    take("--lambda", &TrainConfig::lambda);
    take("--steps", &TrainConfig::steps);
    take("--batch", &TrainConfig::batch_size);
    take("--lr", &TrainConfig::learning_rate);
    take("--seed", &TrainConfig::seed);
    take("--arch", &TrainConfig::architecture);
    take("--checkpoint-every", &TrainConfig::checkpoint_every);
    if (!a_mode.empty()) cfg.a_mode = parse_direction_mode(a_mode);
    cfg.validate();
    gen.merge(file, app);
    const auto g = gen.make();

    io::Json resolved = cfg.to_json();
    resolved.update(gen.to_json());
    echo_config(out, resolved);

    const auto checksum = g->parameter_checksum();
    const int report_every = std::max(1, cfg.steps / 20);
    auto res = train(*g, cfg, std::nullopt, [&](const StepRecord& r) {
      if (r.step % report_every == 0 || r.step == cfg.steps) {
        std::printf("step %d  loss %.4f  L_cl %.4f  L_r %.4f  acc %.3f\n", r.step, r.total, r.classification,
                    r.regression, r.running_accuracy);
        std::fflush(stdout);
      }
    });
    if (g->parameter_checksum() != checksum) throw Error(ErrorKind::Validation, "generator parameters changed during training");
    io::Json info = gen.to_json();
    info["checksum"] = std::to_string(checksum);
    save_training_run(out, res, cfg, info);
    std::printf("wrote %s\n", out.c_str());
  }
};

// ---- evaluate --------------------------------------------------------------

struct EvaluateCmd {
  std::string config;
  std::string metric;
  GeneratorArgs gen;
  std::string directions;
  std::string out = "report.json";
  TrainConfig train_cfg;
  DvnConfig dvn_cfg;
  int eval_samples = 1000;
  bool baselines = false;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("evaluate", "RCA, DVN or oracle recovery of a direction matrix");
    app->add_option("metric", metric, "rca | dvn | recovery")->required()->check(CLI::IsMember({"rca", "dvn", "recovery"}));
    app->add_option("--config", config);
    gen.add(app);
    app->add_option("--directions", directions, "direction checkpoint (.bin)")->required();
    app->add_option("--out", out, "report JSON; existing fields are kept");
    app->add_option("--steps", train_cfg.steps, "RCA reconstructor steps");
    app->add_option("--seed", train_cfg.seed);
    app->add_option("--eval-samples", eval_samples);
    app->add_option("--dvn-size", dvn_cfg.dataset_size);
    app->add_flag("--baselines", baselines, "also report random-orthonormal and coordinate RCA");
    app->callback([this, app] { run(app); });
  }

  void run(CLI::App* app) {
    const auto file = load_config(config);
    TrainConfig tc;
    tc.merge_json(file);
    if (app->count("--steps")) tc.steps = train_cfg.steps;
    if (app->count("--seed")) tc.seed = train_cfg.seed;
    DvnConfig dc;
    if (file.contains("dvn")) dc.merge_json(file.at("dvn"));
    if (app->count("--dvn-size")) dc.dataset_size = dvn_cfg.dataset_size;
    dc.seed = tc.seed;
    gen.merge(file, app);
    const auto g = gen.make();
    const auto a = DirectionMatrix::load(directions);

    io::Json resolved = {{"metric", metric}, {"directions", directions}, {"train", tc.to_json()}, {"dvn", dc.to_json()},
                         {"eval_samples", eval_samples}, {"baselines", baselines}};
    resolved.update(gen.to_json());
    echo_config(output_dir_of(out), resolved);

    auto report = load_report_or_empty(out);
    if (metric == "rca") {
      tc.num_directions = a.num_directions();
      report.rca = evaluate_rca(*g, a, tc, eval_samples);
      std::printf("RCA %.4f\n", *report.rca);
      if (baselines) {
        Rng rng(tc.seed + 1);
        const auto random = DirectionMatrix::from_columns(random_orthogonal(g->latent_dim(), rng).leftCols(a.num_directions()));
        report.rca_random = evaluate_rca(*g, random, tc, eval_samples);
        const auto coord = DirectionMatrix::identity(DirectionMode::UnitNorm, g->latent_dim(), a.num_directions());
        report.rca_coordinate = evaluate_rca(*g, coord, tc, eval_samples);
        std::printf("RCA random %.4f  coordinate %.4f\n", *report.rca_random, *report.rca_coordinate);
      }
    } else if (metric == "dvn") {
      const auto real = sample_real_images(*g, dc.dataset_size, dc.seed + 7919);
      const auto rank = dvn_rank(*g, a, real, dc);
      report.dvn_per_direction = rank.per_direction;
      report.dvn_mean = rank.mean;
      report.dvn_top = rank.top;
      for (int k : rank.order) std::printf("h%d  DVN %.4f\n", k, rank.per_direction[static_cast<std::size_t>(k)]);
      std::printf("DVN %.4f  DVN_top %.4f\n", rank.mean, rank.top);
    } else {
      const auto& oracle = require_oracle(*g, "recovery");
      const auto score = direction_recovery_score(a, oracle.ground_truth_directions());
      report.recovery = score.mean_abs_cosine;
      std::printf("recovery %.4f  assignment:", score.mean_abs_cosine);
      for (int j : score.assignment) std::printf(" %d", j);
      std::printf("\n");
    }
    report.validate();
    io::write_json(out, report.to_json());
  }
};

// ---- chart -----------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Validation, "bad seed '" + item + "'");
    }
  }
  return out;
}

struct ChartCmd {
  std::string config;
  GeneratorArgs gen;
  std::string directions;
  std::string evolution;
  std::string seeds = "0,1,2,3,4";
  std::vector<double> range{-9.0, 9.0};
  ChartSpec spec;
  bool all = false;
  std::string sort;
  std::string report;
  std::string out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("chart", "render G(z + s a_k) grids as PNG");
    app->add_option("--config", config);
    gen.add(app);
    app->add_option("--directions", directions, "direction checkpoint");
    app->add_option("--evolution", evolution, "training run directory; rows are snapshots at 0/25/50/75/100%");
    app->add_option("--k", spec.direction, "direction index (0-based)");
    app->add_option("--seeds", seeds, "comma separated z seeds");
    app->add_option("--range", range, "s_min s_max")->expected(2);
    app->add_option("--num-steps", spec.num_steps, "columns per row");
    app->add_flag("--all", all, "one chart per direction");
    app->add_option("--sort", sort, "with --all: 'dvn' orders charts by descending DVN")->check(CLI::IsMember({"", "dvn"}));
    app->add_option("--report", report, "report JSON with DVN values for --sort dvn");
    app->add_option("--out", out, "PNG file, or a directory with --all")->required();
    app->callback([this, app] { run(app); });
  }

  void run(CLI::App* app) {
    const auto file = load_config(config);
    gen.merge(file, app);
    if (file.contains("seeds") && app->count("--seeds") == 0) seeds = file.at("seeds").get<std::string>();
    if (file.contains("range") && app->count("--range") == 0) range = file.at("range").get<std::vector<double>>();
    if (file.contains("num_steps") && app->count("--num-steps") == 0) spec.num_steps = file.at("num_steps").get<int>();
    spec.z_seeds = parse_seeds(seeds);
    spec.s_min = range.at(0);
    spec.s_max = range.at(1);
    spec.validate();
    const auto g = gen.make();

    io::Json resolved = {{"k", spec.direction}, {"seeds", seeds}, {"range", range}, {"num_steps", spec.num_steps},
                         {"directions", directions}, {"evolution", evolution}, {"all", all}, {"sort", sort}};
    resolved.update(gen.to_json());
    echo_config(all ? fs::path(out) : output_dir_of(out), resolved);

    if (!evolution.empty()) {
      const auto grid = render_evolution(*g, quartile_snapshots(load_snapshots(evolution)), spec);
      write_png(out, grid.tiled());
      std::printf("wrote %s\n", out.c_str());
      return;
    }
    if (directions.empty()) throw Error(ErrorKind::Validation, "--directions or --evolution is required");
    const auto a = DirectionMatrix::load(directions);
    if (!all) {
      write_png(out, render_chart(*g, a, spec).tiled());
      std::printf("wrote %s\n", out.c_str());
      return;
    }
    std::vector<int> order;
    if (sort == "dvn") {
      if (report.empty()) throw Error(ErrorKind::Validation, "--sort dvn needs --report with DVN values");
      const auto r = MetricsReport::from_json(io::read_json(report));
      if (static_cast<int>(r.dvn_per_direction.size()) != a.num_directions()) {
        throw Error(ErrorKind::ShapeMismatch, "report has no DVN value per direction");
      }
      order = rank_values(r.dvn_per_direction).order;
    } else {
      for (int k = 0; k < a.num_directions(); ++k) order.push_back(k);
    }
    fs::create_directories(out);
    for (std::size_t i = 0; i < order.size(); ++i) {
      ChartSpec s = spec;
      s.direction = order[i];
      char name[64];
      std::snprintf(name, sizeof name, "%02zu_h%d.png", i, order[i]);
      write_png(fs::path(out) / name, render_chart(*g, a, s).tiled());
    }
    std::printf("wrote %zu charts to %s\n", order.size(), out.c_str());
  }
};

// ---- saliency --------------------------------------------------------------

struct SaliencyCmd {
  std::string config;
  GeneratorArgs gen;
  std::string action;
  std::string data;
  std::string model;
  std::string directions;
  int bg_index = -1;
  int n = 500;
  SegmenterConfig seg = SegmenterConfig::desk();
  std::string out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("saliency", "mask synthesis, segmenter training and MAE");
    app->add_option("action", action, "synth | train | eval")->required()->check(CLI::IsMember({"synth", "train", "eval"}));
    app->add_option("--config", config);
    gen.add(app);
    app->add_option("--directions", directions, "direction checkpoint holding h_bg (synth)");
    app->add_option("--bg-index", bg_index, "column of --directions used as h_bg; default: the oracle's background factor");
    app->add_option("--n", n, "samples to synthesize");
    app->add_option("--data", data, "dataset directory (train, eval)");
    app->add_option("--model", model, "segmenter checkpoint (eval)");
    app->add_option("--steps", seg.steps);
    app->add_option("--batch", seg.batch);
    app->add_option("--lr", seg.lr);
    app->add_option("--seed", seg.seed);
    app->add_option("--shift", seg.shift, "background shift length");
    app->add_option("--out", out, "output directory")->required();
    app->callback([this, app] { run(app); });
  }

  void run(CLI::App* app) {
    const auto file = load_config(config);
    SegmenterConfig flags = seg;
    seg = SegmenterConfig::desk();
    seg.merge_json(file);
    auto take = [&](const char* flag, auto member) {
      if (app->count(flag) > 0) seg.*member = flags.*member;
    };
    take("--steps", &SegmenterConfig::steps);
    take("--batch", &SegmenterConfig::batch);
    take("--lr", &SegmenterConfig::lr);
    take("--seed", &SegmenterConfig::seed);
    take("--shift", &SegmenterConfig::shift);
    seg.validate();
    gen.merge(file, app);

    io::Json resolved = {{"action", action}, {"segmenter", seg.to_json()}, {"n", n}, {"data", data},
                         {"model", model}, {"directions", directions}, {"bg_index", bg_index}};
    resolved.update(gen.to_json());
    echo_config(out, resolved);

    if (action == "synth") {
      const auto g = gen.make();
      Eigen::VectorXd h;
      if (!directions.empty()) {
        const auto a = DirectionMatrix::load(directions);
        if (bg_index < 0 || bg_index >= a.num_directions()) throw Error(ErrorKind::Index, "--bg-index out of range");
        h = a.effective().col(bg_index);
      } else {
        h = require_oracle(*g, "default h_bg").background_direction();
      }
      std::vector<int> classes;
      if (g->class_conditional()) {
        // Class selection with the oracle label stub over a probe set.
        OracleClassStub stub(g->num_classes());
        Rng rng(seg.seed + 17);
        std::vector<Image> probe;
        for (int i = 0; i < 200; ++i) {
          const int c = std::uniform_int_distribution<int>(0, g->num_classes() - 1)(rng);
          probe.push_back(g->generate(sample_latent(1, g->latent_dim(), rng).front(), c));
          stub.remember(probe.back(), c);
        }
        classes = select_classes(std::cref(stub), probe, g->num_classes(), seg);
      }
      const auto ds = build_saliency_dataset(*g, classes, h, seg, n, seg.seed);
      save_saliency_dataset(out, ds);
      std::printf("%swrote %zu samples to %s\n", ds.acceptance_log().c_str(), ds.samples.size(), out.c_str());
    } else if (action == "train") {
      if (data.empty()) throw Error(ErrorKind::Validation, "--data is required");
      const auto ds = load_saliency_dataset(data);
      const int every = std::max(1, seg.steps / 20);
      const auto res = train_segmenter(ds.samples, seg, [&](const SegmenterStep& s) {
        if (s.step % every == 0) {
          std::printf("step %d  loss %.4f  pixel acc %.4f  lr %.5f\n", s.step, s.loss, s.pixel_accuracy, s.lr);
          std::fflush(stdout);
        }
      });
      res.model.save(fs::path(out) / "segmenter.bin");
      io::write_json(fs::path(out) / "training.json", {{"final_pixel_accuracy", res.final_pixel_accuracy}, {"steps", seg.steps}});
      std::printf("final pixel accuracy %.4f\n", res.final_pixel_accuracy);
    } else {
      if (data.empty() || model.empty()) throw Error(ErrorKind::Validation, "--data and --model are required");
      const auto ds = load_saliency_dataset(data);
      const auto seg_model = Segmenter::load(model);
      const double mae = evaluate_mae(seg_model, ds.samples);
      io::write_json(fs::path(out) / "mae.json", {{"mae", mae}, {"samples", ds.samples.size()}});
      std::printf("MAE %.4f over %zu samples\n", mae, ds.samples.size());
    }
  }
};

// ---- serve -----------------------------------------------------------------

struct ServeCmd {
  std::string config;
  GeneratorArgs gen;
  std::string directions;
  std::string store = "annotations.jsonl";
  std::string report;
  std::string host = "127.0.0.1";
  int port = 8080;
  StudyConfig study;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("serve", "annotation HTTP service");
    app->add_option("--config", config);
    gen.add(app);
    app->add_option("--directions", directions)->required();
    app->add_option("--store", store, "append-only annotation file");
    app->add_option("--report", report, "report JSON whose DVN values order the directions");
    app->add_option("--host", host);
    app->add_option("--port", port);
    app->add_option("--z-seed", study.z_seed, "seed of the shared z-set");
    app->add_option("--rows", study.rows);
    app->callback([this, app] { run(app); });
  }

  void run(CLI::App* app) {
    const auto file = load_config(config);
    gen.merge(file, app);
    if (file.contains("z_seed") && app->count("--z-seed") == 0) study.z_seed = file.at("z_seed").get<std::uint64_t>();
    const auto g = gen.make();
    if (!report.empty()) study.dvn = MetricsReport::from_json(io::read_json(report)).dvn_per_direction;
    io::Json resolved = {{"directions", directions}, {"store", store}, {"report", report}, {"host", host},
                         {"port", port}, {"z_seed", study.z_seed}, {"rows", study.rows}};
    resolved.update(gen.to_json());
    echo_config(output_dir_of(store), resolved);
    AnnotationStore records(store);
    StudyService service(*g, DirectionMatrix::load(directions), study, records);
    std::printf("serving %s on http://%s:%d\n", service.config().z_set_id().c_str(), host.c_str(), port);
    std::fflush(stdout);
    serve(service, host, port);
  }
};

// ---- report ----------------------------------------------------------------

struct ReportCmd {
  std::vector<std::string> inputs;
  std::vector<std::string> annotations;
  std::string out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("report", "comparison tables from metric reports");
    app->add_option("--input", inputs, "NAME=report.json, repeatable; rows keep this order")->required();
    app->add_option("--annotations", annotations, "NAME=annotations.jsonl, fills MOS and category rates");
    app->add_option("--out", out, "output directory")->required();
    app->callback([this] { run(); });
  }

  static std::pair<std::string, std::string> split(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::Validation, "expected NAME=PATH, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
  }

  void run() {
    std::vector<std::pair<std::string, MetricsReport>> reports;
    for (const auto& in : inputs) {
      auto [name, path] = split(in);
      reports.emplace_back(name, MetricsReport::from_json(io::read_json(path)));
    }
    for (const auto& a : annotations) {
      auto [name, path] = split(a);
      auto it = std::find_if(reports.begin(), reports.end(), [&](const auto& r) { return r.first == name; });
      if (it == reports.end()) throw Error(ErrorKind::Validation, "annotations for unknown method '" + name + "'");
      const auto m = mos_aggregate(AnnotationStore::read_latest(path));
      it->second.mos = m.mos;
      it->second.category_rates = m.rates;
    }
    echo_config(out, {{"inputs", inputs}, {"annotations", annotations}});
    export_report(reports, out);
    std::cout << report_text(reports);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent direction discovery toolkit"};
  app.require_subcommand(1);
  TrainCmd train_cmd;
  EvaluateCmd evaluate_cmd;
  ChartCmd chart_cmd;
  SaliencyCmd saliency_cmd;
  ServeCmd serve_cmd;
  ReportCmd report_cmd;
  train_cmd.add(app);
  evaluate_cmd.add(app);
  chart_cmd.add(app);
  saliency_cmd.add(app);
  serve_cmd.add(app);
  report_cmd.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << io::Json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << io::Json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  }
  return 0;
}
