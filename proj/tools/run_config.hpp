#pragma once

// Run configuration for the command-line tool: an INI file with flag
// overrides applied on top.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <gridcast/gridcast.hpp>

namespace gridcast::cli {

/// Rejected configuration; maps to the usage exit code.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  CityInputs inputs;
  bool has_inputs = false;
  int lookback_days = 2;
  std::string crimes = "all";
  ExperimentConfig experiment;
  std::vector<std::uint64_t> seeds{0};
  SynthConfig synth;
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(s)) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.front() == '-') throw ConfigError("invalid seed '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw ConfigError("seed list has duplicates");
  return seeds;
}

namespace detail {

using Tree = boost::property_tree::ptree;

// Accepted keys per section; anything else is rejected.
inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"inputs", {"boundary", "water", "block_groups", "events", "poi_visits"}},
      {"grid", {"cell_area"}},
      {"raster", {"start_date", "end_date", "utc_offset_hours", "crimes", "max_bad_fraction", "category_fallback"}},
      {"experiment",
       {"model", "features", "lookback_days", "split_ratio", "split_seed", "subgrid_size", "subgrids_per_window",
        "min_positive", "filter_scope", "train_cap", "test_cap", "threshold", "seeds"}},
      {"train", {"lr", "batch", "epochs"}},
      {"convlstm", {"hidden", "layers", "kernel", "dropout", "peephole"}},
      {"lstm", {"hidden", "layers"}},
      {"logreg", {"max_iter", "tol", "l2"}},
      {"rf", {"trees", "max_samples", "max_features"}},
      {"synth",
       {"seed", "origin_lat", "origin_lon", "rows", "cols", "cell_area", "start_date", "span_days",
        "utc_offset_hours", "hotspots", "hotspot_intensity", "hotspot_radius_m", "base_rate", "day_night_ratio",
        "coupling", "pois", "visits_per_hour", "activity_persistence", "activity_volatility", "districts",
        "block_group_grid", "lake"}},
  };
  return keys;
}

template <typename T>
void read(const Tree& section, const std::string& sec, const char* key, T& out) {
  const auto v = section.get_optional<std::string>(key);
  if (!v) return;
  const auto parsed = section.get_optional<T>(key);
  if (!parsed) throw ConfigError("[" + sec + "] " + key + ": cannot parse '" + *v + "'");
  out = *parsed;
}

inline void read_cap(const Tree& section, const char* key, std::optional<std::size_t>& out) {
  const auto v = section.get_optional<std::string>(key);
  if (!v || *v == "none" || v->empty()) return;
  const auto parsed = section.get_optional<std::size_t>(key);
  if (!parsed) throw ConfigError(std::string("[experiment] ") + key + ": cannot parse '" + *v + "'");
  out = *parsed;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline UtcSeconds read_date(const std::string& key, const std::string& s) {
  const auto d = parse_date(s);
  if (!d) throw ConfigError("[raster] " + key + ": expected YYYY-MM-DD, got '" + s + "'");
  return *d;
}

}  // namespace detail

/// Loads an INI file. Relative input paths resolve against the file's directory.
inline RunConfig load_run_config(const std::filesystem::path& file) {
  RunConfig rc;
  detail::Tree tree;
  try {
    boost::property_tree::ini_parser::read_ini(file.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  const auto& known = detail::known_keys();
  for (const auto& [sec, body] : tree) {
    const auto it = known.find(sec);
    if (it == known.end()) throw ConfigError("unknown config section [" + sec + "]");
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + sec + "' is outside any section");
    for (const auto& [key, value] : body)
      if (!it->second.contains(key)) throw ConfigError("unknown key '" + key + "' in [" + sec + "]");
  }
  const auto base = std::filesystem::absolute(file).parent_path();
  const detail::Tree empty;
  auto section = [&](const char* name) -> const detail::Tree& {
    const auto child = tree.get_child_optional(name);
    return child ? *child : empty;
  };

  if (const auto& s = section("inputs"); !s.empty()) {
    rc.has_inputs = true;
    auto& in = rc.inputs;
    const auto need = [&](const char* key) {
      const auto v = s.get_optional<std::string>(key);
      if (!v || v->empty()) throw ConfigError(std::string("[inputs] ") + key + " is required");
      return *v;
    };
    in.boundary = detail::resolve(base, need("boundary"));
    in.events = detail::resolve(base, need("events"));
    in.poi_visits = detail::resolve(base, need("poi_visits"));
    if (const auto w = s.get_optional<std::string>("water"); w && !w->empty()) in.water = detail::resolve(base, *w);
    // Entries are path@year.
    for (const auto& item : split_list(need("block_groups"))) {
      const auto at = item.rfind('@');
      if (at == std::string::npos) throw ConfigError("[inputs] block_groups entries must be path@year: " + item);
      BlockGroupFile bg;
      bg.path = detail::resolve(base, item.substr(0, at));
      try {
        bg.year = std::stoi(item.substr(at + 1));
      } catch (const std::exception&) {
        throw ConfigError("[inputs] block_groups: bad year in " + item);
      }
      in.block_groups.push_back(bg);
    }
  }
  detail::read(section("grid"), "grid", "cell_area", rc.inputs.cell_area);
  {
    const auto& s = section("raster");
    if (const auto v = s.get_optional<std::string>("start_date")) rc.inputs.raster.start_date = detail::read_date("start_date", *v);
    if (const auto v = s.get_optional<std::string>("end_date")) rc.inputs.raster.end_date = detail::read_date("end_date", *v);
    detail::read(s, "raster", "utc_offset_hours", rc.inputs.raster.utc_offset_hours);
    detail::read(s, "raster", "crimes", rc.crimes);
    detail::read(s, "raster", "max_bad_fraction", rc.inputs.parse.max_bad_fraction);
    if (const auto v = s.get_optional<std::string>("category_fallback")) {
      if (*v == "strict")
        rc.inputs.category_fallback = CategoryFallback::kStrict;
      else if (*v == "lenient")
        rc.inputs.category_fallback = CategoryFallback::kLenient;
      else
        throw ConfigError("[raster] category_fallback must be strict or lenient");
    }
  }
  auto& ex = rc.experiment;
  {
    const auto& s = section("experiment");
    std::string model(to_string(ex.model)), features(to_string(ex.features)), scope(to_string(ex.split.subgrid.scope));
    detail::read(s, "experiment", "model", model);
    detail::read(s, "experiment", "features", features);
    detail::read(s, "experiment", "filter_scope", scope);
    try {
      ex.model = parse_model_kind(model);
      ex.features = parse_feature_set(features);
      ex.split.subgrid.scope = parse_filter_scope(scope);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    detail::read(s, "experiment", "lookback_days", rc.lookback_days);
    detail::read(s, "experiment", "split_ratio", ex.split.ratio);
    detail::read(s, "experiment", "split_seed", ex.split.subgrid.seed);
    detail::read(s, "experiment", "subgrid_size", ex.split.subgrid.size);
    detail::read(s, "experiment", "subgrids_per_window", ex.split.subgrid.per_window);
    detail::read(s, "experiment", "min_positive", ex.split.subgrid.min_positive);
    detail::read_cap(s, "train_cap", ex.split.train_cap);
    detail::read_cap(s, "test_cap", ex.split.test_cap);
    detail::read(s, "experiment", "threshold", ex.threshold);
    if (const auto v = s.get_optional<std::string>("seeds")) rc.seeds = parse_seeds(*v);
  }
  detail::read(section("train"), "train", "lr", ex.train.lr);
  detail::read(section("train"), "train", "batch", ex.train.batch);
  detail::read(section("train"), "train", "epochs", ex.train.epochs);
  {
    const auto& s = section("convlstm");
    detail::read(s, "convlstm", "hidden", ex.convlstm.hidden);
    detail::read(s, "convlstm", "layers", ex.convlstm.layers);
    detail::read(s, "convlstm", "kernel", ex.convlstm.kernel);
    detail::read(s, "convlstm", "dropout", ex.convlstm.dropout);
    std::string peephole(to_string(ex.convlstm.peephole));
    detail::read(s, "convlstm", "peephole", peephole);
    try {
      ex.convlstm.peephole = parse_peephole_shape(peephole);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  detail::read(section("lstm"), "lstm", "hidden", ex.lstm.hidden);
  detail::read(section("lstm"), "lstm", "layers", ex.lstm.layers);
  detail::read(section("logreg"), "logreg", "max_iter", ex.logreg.max_iter);
  detail::read(section("logreg"), "logreg", "tol", ex.logreg.tol);
  detail::read(section("logreg"), "logreg", "l2", ex.logreg.l2);
  detail::read(section("rf"), "rf", "trees", ex.forest.trees);
  detail::read(section("rf"), "rf", "max_samples", ex.forest.max_samples);
  detail::read(section("rf"), "rf", "max_features", ex.forest.max_features);
  {
    const auto& s = section("synth");
    auto& c = rc.synth;
#define GRIDCAST_SYNTH_KEY(name) detail::read(s, "synth", #name, c.name);
    GRIDCAST_SYNTH_KEY(seed)
    GRIDCAST_SYNTH_KEY(origin_lat)
    GRIDCAST_SYNTH_KEY(origin_lon)
    GRIDCAST_SYNTH_KEY(rows)
    GRIDCAST_SYNTH_KEY(cols)
    GRIDCAST_SYNTH_KEY(cell_area)
    GRIDCAST_SYNTH_KEY(start_date)
    GRIDCAST_SYNTH_KEY(span_days)
    GRIDCAST_SYNTH_KEY(utc_offset_hours)
    GRIDCAST_SYNTH_KEY(hotspots)
    GRIDCAST_SYNTH_KEY(hotspot_intensity)
    GRIDCAST_SYNTH_KEY(hotspot_radius_m)
    GRIDCAST_SYNTH_KEY(base_rate)
    GRIDCAST_SYNTH_KEY(day_night_ratio)
    GRIDCAST_SYNTH_KEY(coupling)
    GRIDCAST_SYNTH_KEY(pois)
    GRIDCAST_SYNTH_KEY(visits_per_hour)
    GRIDCAST_SYNTH_KEY(activity_persistence)
    GRIDCAST_SYNTH_KEY(activity_volatility)
    GRIDCAST_SYNTH_KEY(districts)
    GRIDCAST_SYNTH_KEY(block_group_grid)
    GRIDCAST_SYNTH_KEY(lake)
#undef GRIDCAST_SYNTH_KEY
  }
  return rc;
}

/// Checks every enumeration and range before any input is touched, and
/// derives the internal values (look-back blocks, crime subset).
inline void finalize(RunConfig& rc) {
  try {
    rc.experiment.split.look_back = look_back_blocks(rc.lookback_days);
    rc.inputs.raster.crimes = CrimeSubset::parse(rc.crimes);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto& ex = rc.experiment;
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(ex.threshold >= 0.0 && ex.threshold <= 1.0, "threshold must lie in [0, 1]");
  check(ex.split.ratio > 0.0 && ex.split.ratio < 1.0, "split_ratio must lie in (0, 1)");
  check(ex.split.subgrid.size >= 1 && ex.split.subgrid.per_window >= 1 && ex.split.subgrid.min_positive >= 0,
        "invalid subgrid settings");
  check(ex.train.lr > 0.0 && ex.train.batch >= 1 && ex.train.epochs >= 1, "invalid training settings");
  check(ex.convlstm.dropout >= 0.0 && ex.convlstm.dropout < 1.0, "dropout must lie in [0, 1)");
  check(ex.convlstm.kernel >= 1 && ex.convlstm.kernel % 2 == 1, "kernel must be odd");
  check(ex.forest.trees >= 1, "rf trees must be positive");
  check(rc.inputs.cell_area > 0.0, "cell_area must be positive");
  check(rc.inputs.parse.max_bad_fraction >= 0.0 && rc.inputs.parse.max_bad_fraction <= 1.0,
        "max_bad_fraction must lie in [0, 1]");
  try {
    rc.synth.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

/// INI text for a generated city, referencing the files next to it.
inline std::string city_ini(const SynthConfig& c) {
  std::ostringstream o;
  o << "[inputs]\n"
    << "boundary = boundary.geojson\n"
    << "water = water.geojson\n"
    << "block_groups = block_groups.geojson@" << year_of(c.start()) << "\n"
    << "events = events.csv\n"
    << "poi_visits = poi_visits.csv\n\n"
    << "[grid]\n"
    << "cell_area = " << format_double(c.cell_area) << "\n\n"
    << "[raster]\n"
    << "start_date = " << format_date(c.start()) << "\n"
    << "end_date = " << format_date(c.end()) << "\n"
    << "utc_offset_hours = " << c.utc_offset_hours << "\n"
    << "crimes = all\n";
  return o.str();
}

}  // namespace gridcast::cli
