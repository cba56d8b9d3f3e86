// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "fusetrack/ablation.hpp"
#include "fusetrack/checkpoint.hpp"
#include "fusetrack/config.hpp"
#include "fusetrack/io.hpp"
#include "fusetrack/selftest.hpp"
#include "fusetrack/three_stage.hpp"

namespace fusetrack::cli {

namespace {

RunConfig resolve_config(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  if (const char* seed = std::getenv(kSeedEnv); seed != nullptr && *seed != '\0') {
    RunConfig probe = parse_config(std::string("train.seed=") + seed);
    c.train.seed = probe.train.seed;
  }
  c.eval.held_out.scene = c.data.scene;
  c.validate();
  return c;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Xywh parse_box(const std::string& s) {
  std::istringstream in(s);
  Xywh v{};
  char sep = 0;
  in >> v[0] >> sep >> v[1] >> sep >> v[2] >> sep >> v[3];
  if (!in || v[2] <= 0 || v[3] <= 0) throw ConfigError("--init: expected x,y,w,h with positive size, got '" + s + "'");
  return v;
}

DegradationSpan parse_span(const std::string& s) {
  // modality:kind:begin:end
  std::vector<std::string> parts;
  std::istringstream in(s);
  for (std::string p; std::getline(in, p, ':');) parts.push_back(p);
  if (parts.size() != 4) throw ConfigError("--span: expected modality:kind:begin:end, got '" + s + "'");
  DegradationSpan span;
  if (parts[0] == "rgb") {
    span.modality = Modality::rgb;
  } else if (parts[0] == "thermal") {
    span.modality = Modality::thermal;
  } else {
    throw ConfigError("--span: unknown modality '" + parts[0] + "'");
  }
  try {
    span.kind = parse_degradation(parts[1]);
    span.begin = std::stoul(parts[2]);
    span.end = std::stoul(parts[3]);
  } catch (const std::exception& e) {
    throw ConfigError("--span: " + std::string(e.what()));
  }
  return span;
}

std::string curves_csv(const std::string& provenance, const std::vector<TrainCurveRow>& rows) {
  std::string out = provenance + "step,L_RGB,L_T,lambda_RGB,lambda_T,total\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + fmt(r.l_rgb) + "," + fmt(r.l_t) + "," + fmt(r.lambda_rgb) + "," +
           fmt(r.lambda_t) + "," + fmt(r.total) + "\n";
  return out;
}

int cmd_selftest(bool inject_fault, std::ostream& out, std::ostream& err) {
  SelftestOptions options;
  if (inject_fault) {
    options.reconstruction_fault = [](const Tensor& t) {
      std::vector<double> v(t.data().begin(), t.data().end());
      v[0] += 1e-6;
      return Tensor::from(t.shape(), std::move(v));
    };
  }
  const auto results = run_selftest(options);
  out << format_check_table(results);
  for (const auto& r : results) {
    if (!r.passed) {
      err << "selftest failed: " << r.name << " (value " << r.value << ", tolerance " << r.tolerance << ")\n";
      return kExitFailure;
    }
  }
  out << "all " << results.size() << " checks passed\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, bool quiet, std::ostream& out) {
  const RunConfig config = resolve_config(config_path);
  std::filesystem::create_directories(out_dir);
  auto model = make_model(config);
  auto source = make_training_source(config);
  Trainer trainer(model, config.train);
  const auto rows = trainer.run(source, [&](const TrainCurveRow& r) {
    if (!quiet && (r.step % 100 == 0 || r.step == config.train.steps))
      out << "step " << r.step << " total " << r.total << " lambda_rgb " << r.lambda_rgb << "\n" << std::flush;
  });
  auto ckpt = make_checkpoint(model, &trainer.optimizer());
  ckpt.run_config = config_to_text(config);
  const auto dir = std::filesystem::path(out_dir);
  save_checkpoint((dir / "checkpoint.bin").string(), ckpt);
  write_text_file((dir / "curves.csv").string(), curves_csv(config_provenance(config), rows));
  write_text_file((dir / "config.txt").string(), config_to_text(config));
  out << "checkpoint digest " << checkpoint_digest(ckpt) << "\n";
  return kExitOk;
}

struct TrackArgs {
  std::string checkpoint, config, out, annotations, init;
  std::uint64_t sequence_seed = 1;
  std::vector<std::string> spans;
};

int cmd_track(const TrackArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  RunConfig config = a.config.empty() ? RunConfig{} : resolve_config(a.config);
  if (a.config.empty()) {
    config.model = ckpt.config;
  } else if (model_config_to_text(config.model) != model_config_to_text(ckpt.config)) {
    throw VersionError("model settings in '" + a.config + "' do not match checkpoint '" + a.checkpoint + "'");
  }
  auto model = model_from_checkpoint(ckpt);

  ScenarioSpec spec = config.data.scene;
  spec.seed = a.sequence_seed;
  for (const auto& s : a.spans) spec.spans.push_back(parse_span(s));
  const auto scenario = make_scenario(spec);
  const BoundingBox init = a.init.empty() ? scenario.boxes.front() : from_xywh(parse_box(a.init));

  const auto outputs = track_sequence(
      model, [&](std::size_t t) { return render_frame(scenario, t); }, scenario.boxes.size(), init,
      config.track_options());

  std::string prov = config_provenance(config);
  prov += "# checkpoint=" + checkpoint_digest(ckpt) + "\n";
  prov += "# sequence_seed=" + std::to_string(a.sequence_seed) + "\n";
  for (const auto& s : a.spans) prov += "# span=" + s + "\n";
  const auto xy = to_xywh(init);
  prov += "# init=" + fmt(xy[0]) + "," + fmt(xy[1]) + "," + fmt(xy[2]) + "," + fmt(xy[3]) + "\n";
  write_text_file(a.out, format_result_file(make_result_file(outputs, prov)));

  if (!a.annotations.empty()) {
    std::vector<std::optional<BoundingBox>> rgb, thermal;
    for (const auto& f : scenario_annotations(scenario)) {
      rgb.push_back(f.rgb_gt);
      thermal.push_back(f.thermal_gt);
    }
    write_text_file(a.annotations + ".rgb.txt", format_annotations(rgb));
    write_text_file(a.annotations + ".thermal.txt", format_annotations(thermal));
  }
  out << "tracked " << outputs.size() << " frames -> " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string result, rgb_gt, thermal_gt, curves;
  double tau = kDefaultPrecisionThreshold;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto result = parse_result_file(read_text_file(a.result));
  const auto rgb = parse_annotations(read_text_file(a.rgb_gt));
  const auto thermal = a.thermal_gt.empty() ? std::vector<std::optional<BoundingBox>>{}
                                            : parse_annotations(read_text_file(a.thermal_gt));
  const auto ann = merge_annotations(rgb, thermal);
  if (ann.size() != result.lines.size())
    throw ContractError("result has " + std::to_string(result.lines.size()) + " frames, annotations have " +
                        std::to_string(ann.size()));
  const auto report = evaluate(result_boxes(result), ann, a.tau);
  char buf[256];
  std::snprintf(buf, sizeof buf, "frames %zu tau %g\nPR  %.6f\nSR  %.6f\nMPR %.6f\nMSR %.6f\n", report.frame_count,
                a.tau, report.pr, report.sr, report.mpr, report.msr);
  out << buf;
  if (!a.curves.empty()) {
    std::string prov = "# result=" + a.result + "\n# rgb_gt=" + a.rgb_gt + "\n";
    if (!a.thermal_gt.empty()) prov += "# thermal_gt=" + a.thermal_gt + "\n";
    prov += "# tau=" + fmt(a.tau) + "\n";
    write_text_file(a.curves, prov + format_curves(report));
  }
  return kExitOk;
}

std::vector<LatencyRow> bench_rows(const RunConfig& config) {
  std::vector<LatencyRow> rows;
  for (auto dim : config.bench.dims) {
    ModelConfig m = config.model;
    m.embedding.dim = dim;
    rows.push_back(measure_latency(m, config.bench.warmup, config.bench.samples, config.bench.seed));
  }
  return rows;
}

int cmd_bench(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  const RunConfig config = resolve_config(config_path);
  std::string csv = config_provenance(config) + latency_csv_header() + "\n";
  for (const auto& r : bench_rows(config)) {
    csv += latency_csv_row(r) + "\n";
    out << latency_csv_row(r) << "\n" << std::flush;
  }
  if (!out_path.empty()) write_text_file(out_path, csv);
  return kExitOk;
}

int cmd_ablation(const std::string& kind, const std::string& config_path, const std::string& out_path,
                 std::ostream& out) {
  const RunConfig config = resolve_config(config_path);
  std::vector<ArmResult> cache;
  const auto results = run_ablation(parse_ablation(kind), config, cache, [&](const std::string& arm, const TrainCurveRow& r) {
    if (r.step % 100 == 0) out << arm << " step " << r.step << " total " << r.total << "\n" << std::flush;
  });
  std::string csv = config_provenance(config) + ablation_csv_header() + "\n";
  for (const auto& r : results) csv += ablation_csv_row(r) + "\n";
  out << ablation_csv_header() << "\n";
  for (const auto& r : results) out << ablation_csv_row(r) << "\n";
  if (!out_path.empty()) write_text_file(out_path, csv);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fusetrack: RGB-T single-stage tracker"};
  app.require_subcommand(1);

  auto* selftest = app.add_subcommand("selftest", "run the invariant suite");
  bool inject_fault = false;
  selftest->add_flag("--inject-reconstruction-fault", inject_fault, "perturb block reconstruction (suite check)");

  std::string config_path, out_path, out_dir;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint, curves and resolved config");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_flag("--quiet", quiet, "no progress lines");

  TrackArgs track_args;
  auto* track = app.add_subcommand("track", "track a synthetic sequence; writes a result file");
  track->add_option("--checkpoint", track_args.checkpoint)->required();
  track->add_option("--config", track_args.config, "config whose model section must match the checkpoint");
  track->add_option("--out", track_args.out, "result file")->required();
  track->add_option("--sequence-seed", track_args.sequence_seed);
  track->add_option("--span", track_args.spans, "degradation span modality:kind:begin:end (repeatable)");
  track->add_option("--init", track_args.init, "initial box x,y,w,h (default: ground truth of frame 0)");
  track->add_option("--annotations", track_args.annotations, "write PREFIX.rgb.txt and PREFIX.thermal.txt");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score a result file against annotation files");
  eval->add_option("--result", eval_args.result)->required();
  eval->add_option("--rgb-gt", eval_args.rgb_gt)->required();
  eval->add_option("--thermal-gt", eval_args.thermal_gt);
  eval->add_option("--tau", eval_args.tau, "precision threshold in pixels")->capture_default_str();
  eval->add_option("--curves", eval_args.curves, "write precision/success curves CSV");

  auto* bench = app.add_subcommand("bench", "latency of unified vs three-stage forward");
  bench->add_option("--config", config_path);
  bench->add_option("--out", out_path, "CSV output");

  std::string kind;
  auto* ablation = app.add_subcommand("ablation", "train and evaluate ablation arms");
  ablation->add_option("--kind", kind, "embedding or heads")->required()->check(CLI::IsMember({"embedding", "heads"}));
  ablation->add_option("--config", config_path);
  ablation->add_option("--out", out_path, "CSV output");

  auto* show = app.add_subcommand("config", "print the resolved config");
  show->add_option("--config", config_path);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (selftest->parsed()) return cmd_selftest(inject_fault, out, err);
    if (train->parsed()) return cmd_train(config_path, out_dir, quiet, out);
    if (track->parsed()) return cmd_track(track_args, out);
    if (eval->parsed()) return cmd_eval(eval_args, out);
    if (bench->parsed()) return cmd_bench(config_path, out_path, out);
    if (ablation->parsed()) return cmd_ablation(kind, config_path, out_path, out);
    if (show->parsed()) {
      out << config_to_text(resolve_config(config_path));
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const VersionError& e) {
    err << "version error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fusetrack::cli
