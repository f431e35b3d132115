#pragma once

// End-to-end steps shared by the command-line tool and the tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baselines.hpp"
#include "error.hpp"
#include "features.hpp"
#include "geo_grid.hpp"
#include "geojson.hpp"
#include "ingest.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "sequence.hpp"
#include "training.hpp"

namespace gridcast {

// ---------------------------------------------------------------------------
// Rasterization from files

struct BlockGroupFile {
  std::filesystem::path path;
  int year = 0;
};

struct CityInputs {
  std::filesystem::path boundary;
  std::optional<std::filesystem::path> water;
  std::vector<BlockGroupFile> block_groups;
  std::filesystem::path events;
  std::filesystem::path poi_visits;
  double cell_area = kDefaultCellArea;
  RasterConfig raster;
  ParseOptions parse;
  CategoryFallback category_fallback = CategoryFallback::kLenient;
};

struct IngestCounts {
  std::size_t events = 0, events_skipped = 0;
  std::size_t visits = 0, visits_skipped = 0;
  std::size_t block_groups = 0, block_groups_skipped = 0;
};

struct RasterOutput {
  FrameSet frames;
  RasterSummary summary;
  IngestCounts counts;
};

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), "cannot open ", p.string());
  return in;
}

inline RasterOutput rasterize_city(const CityInputs& in) {
  RasterOutput out;
  std::vector<GeoPolygon> city, water;
  {
    auto f = open_input(in.boundary);
    city = read_polygons(f);
  }
  if (in.water) {
    auto f = open_input(*in.water);
    water = read_polygons(f);
  }
  std::vector<BlockGroupRecord> groups;
  require(!in.block_groups.empty(), "no block-group files configured");
  for (const auto& bg : in.block_groups) {
    auto f = open_input(bg.path);
    auto parsed = parse_block_groups(f, bg.year);
    out.counts.block_groups_skipped += parsed.skipped();
    for (auto& g : parsed.records) groups.push_back(std::move(g));
  }
  out.counts.block_groups = groups.size();
  require(!groups.empty(), "no valid block groups");

  const GridSpec spec = grid_spec_for_boundary(city, in.cell_area);
  // The mask uses the earliest vintage's geometry.
  int first_year = groups.front().year;
  for (const auto& g : groups) first_year = std::min(first_year, g.year);
  std::vector<GeoPolygon> bg_polys;
  for (const auto& g : groups)
    if (g.year == first_year) bg_polys.insert(bg_polys.end(), g.geometry.begin(), g.geometry.end());
  const SpatialMask mask = build_mask(spec, city, water, bg_polys);

  auto ef = open_input(in.events);
  const auto events = parse_events(ef, in.parse);
  out.counts.events = events.records.size();
  out.counts.events_skipped = events.skipped();

  PoiParseOptions popt;
  static_cast<ParseOptions&>(popt) = in.parse;
  popt.fallback = in.category_fallback;
  popt.utc_offset_hours = in.raster.utc_offset_hours;
  auto vf = open_input(in.poi_visits);
  const auto visits = parse_poi_visits(vf, popt);
  out.counts.visits = visits.records.size();
  out.counts.visits_skipped = visits.skipped();

  out.frames = rasterize(spec, mask, events.records, visits.records, groups, in.raster, &out.summary);
  return out;
}

inline nlohmann::json to_json(const RasterSummary& s, const IngestCounts& c) {
  return {{"frames", s.frames},
          {"included_cells", s.included_cells},
          {"positive_cells", s.positive_cells},
          {"positive_rate", s.positive_rate()},
          {"events_in_span", s.events_in_span},
          {"events_outside_grid", s.events_outside_grid},
          {"events_parsed", c.events},
          {"events_skipped", c.events_skipped},
          {"poi_weeks_parsed", c.visits},
          {"poi_weeks_skipped", c.visits_skipped},
          {"block_groups_parsed", c.block_groups},
          {"block_groups_skipped", c.block_groups_skipped}};
}

inline void write_frame_bundle(const FrameSet& fs, const std::filesystem::path& dir) {
  io::write_file_atomic(dir / "frames.bin", encode_frames(fs));
  io::write_file_atomic(dir / "grid.json", to_json(fs.spec, fs.mask).dump(1) + "\n");
}

inline FrameSet read_frame_bundle(const std::filesystem::path& dir) {
  const auto grid = grid_from_json(nlohmann::json::parse(io::read_file(dir / "grid.json")));
  FrameSet fs = decode_frames(io::read_file(dir / "frames.bin"), grid.spec);
  require(fs.mask == grid.mask, "frames.bin and grid.json disagree on the mask");
  return fs;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  ModelKind model = ModelKind::kConvLstm;
  FeatureSet features = FeatureSet::kCMS;
  SplitConfig split;
  TrainConfig train;
  ConvLstmConfig convlstm;
  LstmConfig lstm;
  LogRegConfig logreg;
  ForestConfig forest;
  double threshold = 0.5;
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["model"] = std::string(to_string(c.model));
  j["features"] = std::string(to_string(c.features));
  j["look_back"] = c.split.look_back;
  j["split_ratio"] = c.split.ratio;
  j["split_seed"] = c.split.subgrid.seed;
  j["subgrid_size"] = c.split.subgrid.size;
  j["subgrids_per_window"] = c.split.subgrid.per_window;
  j["min_positive"] = c.split.subgrid.min_positive;
  j["filter_scope"] = std::string(to_string(c.split.subgrid.scope));
  j["train_cap"] = c.split.train_cap ? nlohmann::json(*c.split.train_cap) : nlohmann::json(nullptr);
  j["test_cap"] = c.split.test_cap ? nlohmann::json(*c.split.test_cap) : nlohmann::json(nullptr);
  j["train"] = {{"lr", c.train.lr}, {"batch", c.train.batch}, {"epochs", c.train.epochs}};
  j["convlstm"] = {{"hidden", c.convlstm.hidden},
                   {"layers", c.convlstm.layers},
                   {"kernel", c.convlstm.kernel},
                   {"dropout", c.convlstm.dropout},
                   {"peephole", std::string(to_string(c.convlstm.peephole))}};
  j["lstm"] = {{"hidden", c.lstm.hidden}, {"layers", c.lstm.layers}};
  j["logreg"] = {{"max_iter", c.logreg.max_iter}, {"tol", c.logreg.tol}, {"l2", c.logreg.l2}};
  j["rf"] = {{"trees", c.forest.trees}, {"max_samples", c.forest.max_samples}, {"max_features", c.forest.max_features}};
  j["threshold"] = c.threshold;
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.model = parse_model_kind(j.at("model").get<std::string>());
  c.features = parse_feature_set(j.at("features").get<std::string>());
  c.split.look_back = j.at("look_back").get<int>();
  c.split.ratio = j.at("split_ratio").get<double>();
  c.split.subgrid.seed = j.at("split_seed").get<std::uint64_t>();
  c.split.subgrid.size = j.at("subgrid_size").get<int>();
  c.split.subgrid.per_window = j.at("subgrids_per_window").get<int>();
  c.split.subgrid.min_positive = j.at("min_positive").get<int>();
  c.split.subgrid.scope = parse_filter_scope(j.at("filter_scope").get<std::string>());
  if (!j.at("train_cap").is_null()) c.split.train_cap = j["train_cap"].get<std::size_t>();
  if (!j.at("test_cap").is_null()) c.split.test_cap = j["test_cap"].get<std::size_t>();
  const auto& t = j.at("train");
  c.train.lr = t.at("lr").get<double>();
  c.train.batch = t.at("batch").get<int>();
  c.train.epochs = t.at("epochs").get<int>();
  const auto& cl = j.at("convlstm");
  c.convlstm.hidden = cl.at("hidden").get<int>();
  c.convlstm.layers = cl.at("layers").get<int>();
  c.convlstm.kernel = cl.at("kernel").get<int>();
  c.convlstm.dropout = cl.at("dropout").get<double>();
  c.convlstm.peephole = parse_peephole_shape(cl.at("peephole").get<std::string>());
  c.lstm.hidden = j.at("lstm").at("hidden").get<int>();
  c.lstm.layers = j.at("lstm").at("layers").get<int>();
  c.logreg.max_iter = j.at("logreg").at("max_iter").get<int>();
  c.logreg.tol = j.at("logreg").at("tol").get<double>();
  c.logreg.l2 = j.at("logreg").at("l2").get<double>();
  c.forest.trees = j.at("rf").at("trees").get<int>();
  c.forest.max_samples = j.at("rf").at("max_samples").get<std::size_t>();
  c.forest.max_features = j.at("rf").at("max_features").get<int>();
  c.threshold = j.at("threshold").get<double>();
  return c;
}

struct PreparedData {
  DatasetSplit split;
  SequenceDataset train;
  SequenceDataset test;
};

/// Wraps an existing split; normalization is refit on the training frames.
inline PreparedData prepare_data(const FrameSet& fs, const ExperimentConfig& cfg, DatasetSplit split) {
  PreparedData d;
  d.split = std::move(split);
  require(!d.split.train.empty(), "no training samples survived subgrid filtering");
  require(!d.split.test.empty(), "no test samples survived subgrid filtering");
  const auto stats = fit_training_normalization(fs, cfg.split.look_back, cfg.split.ratio);
  for (SequenceDataset* ds : {&d.train, &d.test}) {
    ds->frames = &fs;
    ds->stats = stats;
    ds->look_back = cfg.split.look_back;
    ds->size = cfg.split.subgrid.size;
    ds->channels = feature_channels(cfg.features);
  }
  d.train.anchors = d.split.train;
  d.test.anchors = d.split.test;
  return d;
}

inline PreparedData prepare_data(const FrameSet& fs, const ExperimentConfig& cfg) {
  return prepare_data(fs, cfg, build_split(fs, cfg.split));
}

inline std::unique_ptr<NeuralModel> make_neural_model(const ExperimentConfig& cfg, int channels, std::uint64_t seed) {
  if (cfg.model == ModelKind::kConvLstm) {
    ConvLstmConfig c = cfg.convlstm;
    c.in_channels = channels;
    c.size = cfg.split.subgrid.size;
    return std::make_unique<ConvLstmNet>(c, seed);
  }
  require(cfg.model == ModelKind::kLstm, "not a neural model: ", to_string(cfg.model));
  LstmConfig c = cfg.lstm;
  c.in_channels = channels;
  c.size = cfg.split.subgrid.size;
  return std::make_unique<LstmNet>(c, seed);
}

/// Trained model of any kind, serialized: a binary checkpoint for the
/// networks, JSON for the baselines.
struct ModelArtifact {
  ModelKind kind = ModelKind::kConvLstm;
  std::string bytes;
  std::string extension() const { return kind == ModelKind::kConvLstm || kind == ModelKind::kLstm ? ".ckpt" : ".json"; }
};

struct SeedRun {
  std::uint64_t seed = 0;
  ModelArtifact artifact;
  TrainResult trace;
  PredictionSet test;
};

inline SeedRun train_seed(const PreparedData& data, const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  run.artifact.kind = cfg.model;
  const int channels = static_cast<int>(data.train.channels.size());
  switch (cfg.model) {
    case ModelKind::kConvLstm:
    case ModelKind::kLstm: {
      auto model = make_neural_model(cfg, channels, seed);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      run.trace = train_neural(*model, data.train, tc);
      nlohmann::json meta = model->config_json();
      meta["seed"] = seed;
      meta["features"] = std::string(to_string(cfg.features));
      meta["look_back"] = cfg.split.look_back;
      run.artifact.bytes = encode_checkpoint(make_checkpoint(meta.dump(), model->parameters(), model->buffers()));
      run.test = predict_neural(*model, data.test);
      break;
    }
    case ModelKind::kLogReg: {
      const auto lr = fit_logistic_regression(cell_dataset(data.train), cfg.logreg);
      auto j = to_json(lr);
      j["seed"] = seed;
      run.artifact.bytes = j.dump() + "\n";
      run.test = predict_cells_all(lr, data.test);
      break;
    }
    case ModelKind::kForest: {
      const auto rf = fit_random_forest(cell_dataset(data.train), cfg.forest, seed);
      auto j = to_json(rf);
      j["seed"] = seed;
      run.artifact.bytes = j.dump() + "\n";
      run.test = predict_cells_all(rf, data.test);
      break;
    }
  }
  return run;
}

/// Restores a serialized model and scores the test set.
inline PredictionSet predict_artifact(const ModelArtifact& a, const PreparedData& data) {
  if (a.kind == ModelKind::kLogReg) return predict_cells_all(logreg_from_json(nlohmann::json::parse(a.bytes)), data.test);
  if (a.kind == ModelKind::kForest) return predict_cells_all(forest_from_json(nlohmann::json::parse(a.bytes)), data.test);
  const Checkpoint ck = decode_checkpoint(a.bytes);
  const auto meta = nlohmann::json::parse(ck.metadata);
  const auto seed = meta.at("seed").get<std::uint64_t>();
  std::unique_ptr<NeuralModel> model;
  if (a.kind == ModelKind::kConvLstm)
    model = std::make_unique<ConvLstmNet>(convlstm_config_from_json(meta), seed);
  else
    model = std::make_unique<LstmNet>(lstm_config_from_json(meta), seed);
  load_checkpoint(ck, model->parameters(), model->buffers());
  model->mark_loaded();
  return predict_neural(*model, data.test);
}

inline SeedReport score(const PredictionSet& ps, std::uint64_t seed, double threshold) {
  SeedReport r;
  r.seed = seed;
  r.confusion = confusion_at(ps, threshold);
  r.metrics = metrics(r.confusion);
  return r;
}

inline EvalReport make_report(const ExperimentConfig& cfg, const std::vector<SeedRun>& runs) {
  EvalReport rep;
  rep.model = std::string(to_string(cfg.model));
  rep.features = std::string(to_string(cfg.features));
  rep.look_back = cfg.split.look_back;
  rep.threshold = cfg.threshold;
  for (const auto& run : runs) rep.seeds.push_back(score(run.test, run.seed, cfg.threshold));
  return rep;
}

}  // namespace gridcast
