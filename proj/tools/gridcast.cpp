// Command-line entry points: synth, rasterize, train, evaluate, ablate.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <gridcast/gridcast.hpp>

#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace gridcast;
using gridcast::cli::ConfigError;
using gridcast::cli::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Flags {
  std::string config;
  std::string out;
  std::string frames;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string model;
  std::string features;
  std::optional<int> lookback_days;
  std::string crimes;
  std::optional<double> threshold;
};

void add_common(CLI::App* cmd, Flags& f, bool need_config) {
  auto* c = cmd->add_option("--config", f.config, "INI configuration file");
  if (need_config) c->required()->check(CLI::ExistingFile);
  else c->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory")->required();
}

void add_experiment(CLI::App* cmd, Flags& f) {
  cmd->add_option("--frames", f.frames, "Directory with frames.bin and grid.json (default: --out)");
  auto* seed = cmd->add_option("--seed", f.seed, "Single model seed");
  cmd->add_option("--seeds", f.seeds, "Comma-separated model seeds")->excludes(seed);
  cmd->add_option("--model", f.model, "convlstm, lstm, logreg, or rf");
  cmd->add_option("--features", f.features, "C, CM, CS, or CMS");
  cmd->add_option("--lookback-days", f.lookback_days, "1, 2, 7, or 14");
  cmd->add_option("--threshold", f.threshold, "Decision threshold in [0, 1]");
}

/// Config file, then flag overrides, then validation.
RunConfig resolve_config(const Flags& f) {
  RunConfig rc = f.config.empty() ? RunConfig{} : cli::load_run_config(f.config);
  try {
    if (!f.model.empty()) rc.experiment.model = parse_model_kind(f.model);
    if (!f.features.empty()) rc.experiment.features = parse_feature_set(f.features);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (f.lookback_days) rc.lookback_days = *f.lookback_days;
  if (!f.crimes.empty()) rc.crimes = f.crimes;
  if (f.threshold) rc.experiment.threshold = *f.threshold;
  if (f.seed) rc.seeds = {*f.seed};
  if (!f.seeds.empty()) rc.seeds = cli::parse_seeds(f.seeds);
  cli::finalize(rc);
  return rc;
}

fs::path frames_dir(const Flags& f) { return f.frames.empty() ? fs::path(f.out) : fs::path(f.frames); }

void write_text(const fs::path& p, const std::string& s) { io::write_file_atomic(p, s); }

std::string artifact_name(std::uint64_t seed, const ModelArtifact& a) {
  return "model_seed" + std::to_string(seed) + a.extension();
}

int cmd_synth(const Flags& f) {
  RunConfig rc = resolve_config(f);
  if (f.seed) rc.synth.seed = *f.seed;
  const fs::path out(f.out);
  write_synth(generate(rc.synth), out);
  write_text(out / "synth.json", to_json(rc.synth).dump(1) + "\n");
  write_text(out / "city.ini", cli::city_ini(rc.synth));
  std::cout << "wrote synthetic city to " << out.string() << "\n";
  return kExitOk;
}

int cmd_rasterize(const Flags& f) {
  const RunConfig rc = resolve_config(f);
  if (!rc.has_inputs) throw ConfigError("config has no [inputs] section");
  if (rc.inputs.raster.end_date <= rc.inputs.raster.start_date)
    throw ConfigError("[raster] start_date and end_date are required, with end_date after start_date");
  const auto r = rasterize_city(rc.inputs);
  const fs::path out(f.out);
  write_frame_bundle(r.frames, out);
  const auto& ex = rc.experiment;
  if (r.frames.n_blocks() > ex.split.look_back) {
    // Statistics over the frames the configured look-back trains on.
    const auto stats = fit_training_normalization(r.frames, ex.split.look_back, ex.split.ratio);
    nlohmann::json nj = to_json(stats);
    nj["look_back"] = ex.split.look_back;
    nj["split_ratio"] = ex.split.ratio;
    write_text(out / "normalization.json", nj.dump(1) + "\n");
  }
  const auto summary = to_json(r.summary, r.counts);
  write_text(out / "summary.json", summary.dump(1) + "\n");
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

nlohmann::json run_manifest(const ExperimentConfig& ex, const std::vector<SeedRun>& runs) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["experiment"] = to_json(ex);
  j["frame_file"] = "frames.bin";
  auto seeds = nlohmann::json::array();
  for (const auto& r : runs)
    seeds.push_back({{"seed", r.seed},
                     {"model_file", artifact_name(r.seed, r.artifact)},
                     {"final_loss", r.trace.epoch_loss.empty() ? nlohmann::json(nullptr)
                                                               : nlohmann::json(r.trace.epoch_loss.back())}});
  j["seeds"] = seeds;
  return j;
}

void write_evaluation(const fs::path& out, const ExperimentConfig& ex, const std::vector<SeedRun>& runs) {
  const EvalReport rep = make_report(ex, runs);
  write_text(out / "report.csv", report_csv(rep));
  write_text(out / "report.json", to_json(rep).dump(1) + "\n");
  const auto taus = default_threshold_grid();
  for (const auto& r : runs)
    write_text(out / ("sweep_seed" + std::to_string(r.seed) + ".csv"), sweep_csv(sweep_thresholds(r.test, taus)));
}

/// Trains every seed and writes models, loss traces, split, and manifest.
std::vector<SeedRun> train_all(const FrameSet& frames, const ExperimentConfig& ex,
                               const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  const PreparedData data = prepare_data(frames, ex);
  SplitIndex idx{ex.split, data.split, "frames.bin"};
  write_text(out / "split.json", to_json(idx).dump() + "\n");
  std::vector<SeedRun> runs;
  for (const auto seed : seeds) {
    std::cerr << "training " << to_string(ex.model) << " (" << to_string(ex.features) << ") seed " << seed << " on "
              << data.train.size_samples() << " samples\n";
    SeedRun run = train_seed(data, ex, seed);
    write_text(out / artifact_name(seed, run.artifact), run.artifact.bytes);
    write_text(out / ("loss_seed" + std::to_string(seed) + ".csv"), loss_trace_csv(run.trace));
    runs.push_back(std::move(run));
  }
  write_text(out / "run.json", run_manifest(ex, runs).dump(1) + "\n");
  return runs;
}

int cmd_train(const Flags& f) {
  const RunConfig rc = resolve_config(f);
  const FrameSet frames = read_frame_bundle(frames_dir(f));
  train_all(frames, rc.experiment, rc.seeds, f.out);
  return kExitOk;
}

int cmd_evaluate(const Flags& f) {
  const fs::path out(f.out);
  const auto manifest = nlohmann::json::parse(io::read_file(out / "run.json"));
  ExperimentConfig ex = experiment_from_json(manifest.at("experiment"));
  if (f.threshold) {
    if (*f.threshold < 0.0 || *f.threshold > 1.0) throw ConfigError("threshold must lie in [0, 1]");
    ex.threshold = *f.threshold;
  }
  std::optional<std::vector<std::uint64_t>> only;
  if (f.seed) only = std::vector<std::uint64_t>{*f.seed};
  if (!f.seeds.empty()) only = cli::parse_seeds(f.seeds);

  const FrameSet frames = read_frame_bundle(frames_dir(f));
  const auto idx = split_index_from_json(nlohmann::json::parse(io::read_file(out / "split.json")));
  const PreparedData data = prepare_data(frames, ex, idx.split);
  std::vector<SeedRun> runs;
  for (const auto& s : manifest.at("seeds")) {
    const auto seed = s.at("seed").get<std::uint64_t>();
    if (only && std::find(only->begin(), only->end(), seed) == only->end()) continue;
    SeedRun run;
    run.seed = seed;
    run.artifact.kind = ex.model;
    run.artifact.bytes = io::read_file(out / s.at("model_file").get<std::string>());
    run.test = predict_artifact(run.artifact, data);
    runs.push_back(std::move(run));
  }
  require(!runs.empty(), "no trained seeds match the request");
  write_evaluation(out, ex, runs);
  std::cout << to_json(make_report(ex, runs)).dump() << "\n";
  return kExitOk;
}

int cmd_ablate(const Flags& f) {
  const RunConfig rc = resolve_config(f);
  const FrameSet frames = read_frame_bundle(frames_dir(f));
  const fs::path out(f.out);
  std::vector<EvalReport> reports;
  for (const auto set : {FeatureSet::kC, FeatureSet::kCM, FeatureSet::kCS, FeatureSet::kCMS}) {
    ExperimentConfig ex = rc.experiment;
    ex.features = set;
    const fs::path dir = out / ("features_" + std::string(to_string(set)));
    const auto runs = train_all(frames, ex, rc.seeds, dir);
    write_evaluation(dir, ex, runs);
    reports.push_back(make_report(ex, runs));
  }
  write_text(out / "ablation.csv", ablation_csv(reports));
  std::cout << "wrote " << (out / "ablation.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridcast: spatiotemporal event forecasting on grid cells"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic city");
  add_common(synth, f, false);
  synth->add_option("--seed", f.seed, "Generator seed (overrides [synth] seed)");

  auto* raster = app.add_subcommand("rasterize", "Ingest inputs into a frame file");
  add_common(raster, f, true);
  raster->add_option("--crimes", f.crimes, "all, violent, or property");
  raster->add_option("--lookback-days", f.lookback_days, "Look-back used for the normalization statistics");

  auto* train = app.add_subcommand("train", "Train one model per seed");
  add_common(train, f, false);
  add_experiment(train, f);

  auto* evaluate = app.add_subcommand("evaluate", "Score trained models on the test split");
  evaluate->add_option("--out", f.out, "Directory written by train")->required();
  evaluate->add_option("--frames", f.frames, "Directory with frames.bin and grid.json (default: --out)");
  auto* eseed = evaluate->add_option("--seed", f.seed, "Evaluate a single seed");
  evaluate->add_option("--seeds", f.seeds, "Evaluate these seeds")->excludes(eseed);
  evaluate->add_option("--threshold", f.threshold, "Decision threshold in [0, 1]");

  auto* ablate = app.add_subcommand("ablate", "Train and score every feature set");
  add_common(ablate, f, false);
  add_experiment(ablate, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(f);
    if (*raster) return cmd_rasterize(f);
    if (*train) return cmd_train(f);
    if (*evaluate) return cmd_evaluate(f);
    if (*ablate) return cmd_ablate(f);
  } catch (const ConfigError& e) {
    std::cerr << "gridcast: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "gridcast: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
