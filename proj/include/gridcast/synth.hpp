#pragma once

// Deterministic synthetic city: boundary, a lake, block groups, POIs with
// weekly visit streams, and crime events drawn from a known intensity
// surface, all written in the ingest formats.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "geo_grid.hpp"
#include "geojson.hpp"
#include "ingest.hpp"
#include "io.hpp"
#include "poi_categories.hpp"
#include "rng.hpp"
#include "timeutil.hpp"

namespace gridcast {

struct SynthConfig {
  std::uint64_t seed = 0;
  double origin_lat = 39.90;
  double origin_lon = -75.25;
  int rows = 32;
  int cols = 32;
  double cell_area = kDefaultCellArea;
  std::string start_date = "2019-01-01";
  int span_days = 365;
  int utc_offset_hours = -5;

  int hotspots = 3;
  double hotspot_intensity = 20.0;   // expected events per cell per block at a hotspot centre
  double hotspot_radius_m = 700.0;   // Gaussian sigma
  double base_rate = 0.001;          // expected events per cell per block everywhere
  double day_night_ratio = 2.0;      // afternoon-evening block over night-morning block
  double coupling = 0.7;             // mobility-crime coupling in [0, 1]

  int pois = 300;
  double visits_per_hour = 4.0;      // mean hourly visits of a POI at full activity
  double activity_persistence = 0.9; // day-to-day AR(1) coefficient of district activity
  double activity_volatility = 0.35; // innovation sd of log activity
  int districts = 2;                 // activity districts per axis
  int block_group_grid = 4;          // block groups per axis
  bool lake = true;

  void validate() const {
    require(rows >= 16 && cols >= 16, "synthetic grid must be at least 16x16 cells");
    require(cell_area > 0 && span_days >= 1, "invalid synthetic extent");
    require(hotspots >= 0 && hotspot_intensity >= 0 && base_rate >= 0 && hotspot_radius_m > 0,
            "intensities must be non-negative");
    require(day_night_ratio > 0, "day/night ratio must be positive");
    require(coupling >= 0.0 && coupling <= 1.0, "coupling must lie in [0, 1]");
    require(pois >= 0 && visits_per_hour >= 0, "invalid POI settings");
    require(districts >= 1 && block_group_grid >= 1, "invalid partition settings");
    require(parse_date(start_date).has_value(), "start_date must be YYYY-MM-DD");
  }

  UtcSeconds start() const { return *parse_date(start_date); }
  UtcSeconds end() const { return start() + days_to_seconds(span_days); }
  int n_blocks() const { return span_days * kBlocksPerDay; }
};

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
#define GRIDCAST_SYNTH_FIELD(name) \
  if (j.contains(#name)) c.name = j.at(#name).get<decltype(c.name)>();
  GRIDCAST_SYNTH_FIELD(seed)
  GRIDCAST_SYNTH_FIELD(origin_lat)
  GRIDCAST_SYNTH_FIELD(origin_lon)
  GRIDCAST_SYNTH_FIELD(rows)
  GRIDCAST_SYNTH_FIELD(cols)
  GRIDCAST_SYNTH_FIELD(cell_area)
  GRIDCAST_SYNTH_FIELD(start_date)
  GRIDCAST_SYNTH_FIELD(span_days)
  GRIDCAST_SYNTH_FIELD(utc_offset_hours)
  GRIDCAST_SYNTH_FIELD(hotspots)
  GRIDCAST_SYNTH_FIELD(hotspot_intensity)
  GRIDCAST_SYNTH_FIELD(hotspot_radius_m)
  GRIDCAST_SYNTH_FIELD(base_rate)
  GRIDCAST_SYNTH_FIELD(day_night_ratio)
  GRIDCAST_SYNTH_FIELD(coupling)
  GRIDCAST_SYNTH_FIELD(pois)
  GRIDCAST_SYNTH_FIELD(visits_per_hour)
  GRIDCAST_SYNTH_FIELD(activity_persistence)
  GRIDCAST_SYNTH_FIELD(activity_volatility)
  GRIDCAST_SYNTH_FIELD(districts)
  GRIDCAST_SYNTH_FIELD(block_group_grid)
  GRIDCAST_SYNTH_FIELD(lake)
#undef GRIDCAST_SYNTH_FIELD
  return c;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"origin_lat", c.origin_lat},
          {"origin_lon", c.origin_lon},
          {"rows", c.rows},
          {"cols", c.cols},
          {"cell_area", c.cell_area},
          {"start_date", c.start_date},
          {"span_days", c.span_days},
          {"utc_offset_hours", c.utc_offset_hours},
          {"hotspots", c.hotspots},
          {"hotspot_intensity", c.hotspot_intensity},
          {"hotspot_radius_m", c.hotspot_radius_m},
          {"base_rate", c.base_rate},
          {"day_night_ratio", c.day_night_ratio},
          {"coupling", c.coupling},
          {"pois", c.pois},
          {"visits_per_hour", c.visits_per_hour},
          {"activity_persistence", c.activity_persistence},
          {"activity_volatility", c.activity_volatility},
          {"districts", c.districts},
          {"block_group_grid", c.block_group_grid},
          {"lake", c.lake}};
}

/// The grid the generator draws on; grid_spec_for_boundary on the generated
/// boundary reproduces it.
inline GridSpec synth_grid(const SynthConfig& c) {
  GridSpec s;
  s.origin_lat = c.origin_lat;
  s.origin_lon = c.origin_lon;
  s.cell_side_m = std::sqrt(c.cell_area);
  s.n_rows = c.rows;
  s.n_cols = c.cols;
  s.centroid_lat = c.origin_lat + c.rows * s.cell_side_m / kMetersPerDegreeLat / 2.0;
  return s;
}

/// The intensity surface behind the generated events.
struct SynthWorld {
  SynthConfig config;
  GridSpec grid;
  std::vector<Vec2> hotspots;                  // projected metres
  std::vector<double> spatial;                 // [cell], events per block before modulation
  std::vector<std::vector<double>> activity;   // [district][day], mean about 1
  std::vector<Vec2> poi_location;              // projected metres
  std::vector<int> poi_category;               // 1..11
  std::vector<double> poi_scale;               // relative popularity

  int district_of(Vec2 p) const {
    const double w = grid.n_cols * grid.cell_side_m, h = grid.n_rows * grid.cell_side_m;
    const int d = config.districts;
    const int dx = std::clamp(static_cast<int>(p.x / w * d), 0, d - 1);
    const int dy = std::clamp(static_cast<int>(p.y / h * d), 0, d - 1);
    return dy * d + dx;
  }

  /// Day/night factors average to 1; block 1 of each local day is the
  /// afternoon-evening block.
  double diurnal(int block) const {
    const double r = config.day_night_ratio;
    return block % 2 == 1 ? 2.0 * r / (1.0 + r) : 2.0 / (1.0 + r);
  }

  /// Expected events in a cell during a block.
  double rate(int row, int col, int block) const {
    const std::size_t cell = static_cast<std::size_t>(row) * grid.n_cols + col;
    const Vec2 centre = cell_center({row, col}, grid);
    const double a = activity[static_cast<std::size_t>(district_of(centre))][static_cast<std::size_t>(block / 2)];
    return spatial[cell] * diurnal(block) * ((1.0 - config.coupling) + config.coupling * a);
  }
};

namespace detail {
inline constexpr std::uint64_t kStreamHotspots = 1, kStreamPois = 2, kStreamActivity = 3, kStreamEvents = 4,
                               kStreamVisits = 5;
}

inline SynthWorld build_world(const SynthConfig& cfg) {
  cfg.validate();
  SynthWorld w;
  w.config = cfg;
  w.grid = synth_grid(cfg);
  const double side = w.grid.cell_side_m;
  const double width = cfg.cols * side, height = cfg.rows * side;

  Rng hr(derive_seed(cfg.seed, detail::kStreamHotspots));
  const double margin = 3.0 * side;
  for (int h = 0; h < cfg.hotspots; ++h) {
    Vec2 best{};
    for (int attempt = 0; attempt < 100; ++attempt) {
      best = {hr.uniform(margin, width - margin), hr.uniform(margin, height - margin)};
      bool far = true;
      for (const Vec2& o : w.hotspots) far = far && std::hypot(o.x - best.x, o.y - best.y) > 5.0 * side;
      if (far) break;
    }
    w.hotspots.push_back(best);
  }

  w.spatial.assign(w.grid.cell_count(), cfg.base_rate);
  const double s2 = 2.0 * cfg.hotspot_radius_m * cfg.hotspot_radius_m;
  for (int r = 0; r < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c) {
      const Vec2 p = cell_center({r, c}, w.grid);
      for (const Vec2& h : w.hotspots) {
        const double d2 = (p.x - h.x) * (p.x - h.x) + (p.y - h.y) * (p.y - h.y);
        w.spatial[static_cast<std::size_t>(r) * cfg.cols + c] += cfg.hotspot_intensity * std::exp(-d2 / s2);
      }
    }

  // Log-AR(1) activity per district, rescaled to mean 1 over the span.
  Rng ar(derive_seed(cfg.seed, detail::kStreamActivity));
  const int n_districts = cfg.districts * cfg.districts;
  const double rho = cfg.activity_persistence, sd = cfg.activity_volatility;
  for (int d = 0; d < n_districts; ++d) {
    std::vector<double> a(static_cast<std::size_t>(cfg.span_days));
    double x = ar.normal() * sd / std::sqrt(std::max(1e-12, 1.0 - rho * rho));
    double sum = 0.0;
    for (double& v : a) {
      v = std::exp(x);
      sum += v;
      x = rho * x + sd * ar.normal();
    }
    for (double& v : a) v *= static_cast<double>(a.size()) / sum;
    w.activity.push_back(std::move(a));
  }

  // A fraction `coupling` of POIs clusters around hotspots; the rest is uniform.
  Rng pr(derive_seed(cfg.seed, detail::kStreamPois));
  for (int p = 0; p < cfg.pois; ++p) {
    Vec2 loc;
    if (!w.hotspots.empty() && pr.uniform() < cfg.coupling) {
      const Vec2 h = w.hotspots[pr.below(w.hotspots.size())];
      do {
        loc = {h.x + 2.0 * cfg.hotspot_radius_m * pr.normal(), h.y + 2.0 * cfg.hotspot_radius_m * pr.normal()};
      } while (loc.x <= 0 || loc.y <= 0 || loc.x >= width || loc.y >= height);
    } else {
      loc = {pr.uniform(0.0, width), pr.uniform(0.0, height)};
    }
    w.poi_location.push_back(loc);
    w.poi_category.push_back(1 + static_cast<int>(pr.below(kPoiCategoryCount)));
    w.poi_scale.push_back(0.5 + pr.uniform());
  }
  return w;
}

/// Expected events per (block, cell), row-major cells.
inline std::vector<std::vector<double>> ground_truth_rates(const SynthConfig& cfg) {
  const SynthWorld w = build_world(cfg);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(cfg.n_blocks()));
  for (int b = 0; b < cfg.n_blocks(); ++b) {
    auto& layer = out[static_cast<std::size_t>(b)];
    layer.resize(w.grid.cell_count());
    for (int r = 0; r < cfg.rows; ++r)
      for (int c = 0; c < cfg.cols; ++c) layer[static_cast<std::size_t>(r) * cfg.cols + c] = w.rate(r, c, b);
  }
  return out;
}

struct SynthFiles {
  std::string events_csv;
  std::string poi_visits_csv;
  std::string block_groups_geojson;
  std::string boundary_geojson;
  std::string water_geojson;
};

namespace detail {

inline std::string fixed7(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.7f", v);
  return buf;
}

inline nlohmann::json feature_collection(nlohmann::json features) {
  return {{"type", "FeatureCollection"}, {"format_version", kGeoJsonFormatVersion}, {"features", std::move(features)}};
}

inline GeoPolygon geo_ring(std::initializer_list<Vec2> pts, const GridSpec& g) {
  GeoPolygon poly;
  auto& ring = poly.rings.emplace_back();
  for (Vec2 p : pts) ring.push_back(unproject(p, g));
  return poly;
}

}  // namespace detail

inline SynthFiles generate(const SynthConfig& cfg) {
  const SynthWorld w = build_world(cfg);
  const GridSpec& g = w.grid;
  const double side = g.cell_side_m;
  const double width = cfg.cols * side, height = cfg.rows * side;
  const BlockClock clock = BlockClock::for_span(cfg.start(), cfg.end(), cfg.utc_offset_hours);
  SynthFiles files;

  // Boundary: the grid rectangle with two opposite corners clipped.
  const double cut = 3.0 * side;
  files.boundary_geojson =
      detail::feature_collection(
          {{{"type", "Feature"},
            {"properties", {{"name", "synthetic city"}}},
            {"geometry", geojson_polygon(detail::geo_ring({{0, 0},
                                                           {width - cut, 0},
                                                           {width, cut},
                                                           {width, height},
                                                           {cut, height},
                                                           {0, height - cut}},
                                                          g))}}})
          .dump(1) +
      "\n";

  auto water = nlohmann::json::array();
  if (cfg.lake) {
    // Covers a 2x3 block of cells entirely, plus a margin.
    const double x0 = (cfg.cols - 6) * side - 10.0, y0 = 2 * side - 10.0;
    water.push_back({{"type", "Feature"},
                     {"properties", {{"name", "lake"}}},
                     {"geometry", geojson_polygon(detail::geo_ring(
                                      {{x0, y0}, {x0 + 3 * side + 20, y0}, {x0 + 3 * side + 20, y0 + 2 * side + 20},
                                       {x0, y0 + 2 * side + 20}},
                                      g))}});
  }
  files.water_geojson = detail::feature_collection(std::move(water)).dump(1) + "\n";

  // Block groups: a regular partition with smooth attribute gradients; a few
  // attributes track the local crime intensity.
  {
    auto features = nlohmann::json::array();
    const int n = cfg.block_group_grid;
    double max_spatial = 0.0;
    for (double s : w.spatial) max_spatial = std::max(max_spatial, s);
    for (int by = 0; by < n; ++by)
      for (int bx = 0; bx < n; ++bx) {
        const double x0 = width * bx / n, x1 = width * (bx + 1) / n;
        const double y0 = height * by / n, y1 = height * (by + 1) / n;
        const double u = (bx + 0.5) / n, v = (by + 0.5) / n;
        const auto cell = cell_of(Vec2{(x0 + x1) / 2, (y0 + y1) / 2}, g);
        double heat = 0.0;
        if (cell && max_spatial > 0)
          heat = w.spatial[static_cast<std::size_t>(cell->row) * cfg.cols + cell->col] / max_spatial;
        nlohmann::json props;
        props["GEOID"] = "BG" + std::to_string(by * n + bx);
        const std::array<double, kSociodemoCount> values = {
            48 + 4 * u,                 // pct_female
            30 + 10 * v,                // median_age_male
            32 + 10 * v,                // median_age_female
            70 - 40 * u,                // pct_white
            15 + 30 * u,                // pct_black
            1,                          // pct_american_indian_alaska_native
            5 + 5 * v,                  // pct_asian
            0.5,                        // pct_native_hawaiian_other
            3 + 2 * u,                  // pct_other_race
            60 - 15 * heat,             // pct_employed
            5 + 20 * heat,              // pct_unemployed
            0.5,                        // pct_armed_forces
            34.5 - 5 * heat,            // pct_not_in_labor_force
            70000 - 40000 * heat - 10000 * u,  // median_household_income
            2 + 3 * heat,               // pct_no_schooling
            30 + 10 * heat,             // pct_high_school_diploma
            25 - 10 * heat + 5 * v,     // pct_bachelors_degree
            5 + 3 * v,                  // pct_professional_degree
            35 + 10 * heat,             // pct_male_never_married
            45 - 10 * heat,             // pct_male_married
            5,                          // pct_male_widowed
            15,                         // pct_male_divorced
            33 + 10 * heat,             // pct_female_never_married
            44 - 10 * heat,             // pct_female_married
            8,                          // pct_female_widowed
            15,                         // pct_female_divorced
        };
        for (std::size_t i = 0; i < kSociodemoCount; ++i) props[std::string(kSociodemoNames[i])] = values[i];
        features.push_back(
            {{"type", "Feature"},
             {"properties", props},
             {"geometry", geojson_polygon(detail::geo_ring({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, g))}});
      }
    files.block_groups_geojson = detail::feature_collection(std::move(features)).dump(1) + "\n";
  }

  // POI visits, one row per POI-week. Weeks start on local midnights from
  // the first study day.
  {
    std::string out = "# format_version=" + std::to_string(kIngestFormatVersion) +
                      "\npoi_id,top_category,lat,lon,week_start,hourly_visits\n";
    Rng vr(derive_seed(cfg.seed, detail::kStreamVisits));
    // One representative NAICS string per category.
    std::array<std::string_view, kPoiCategoryCount + 1> names{};
    for (const auto& e : poi_category_vocabulary())
      if (names[static_cast<std::size_t>(e.id)].empty()) names[static_cast<std::size_t>(e.id)] = e.top_category;
    const int weeks = (cfg.span_days + 6) / 7;
    for (std::size_t p = 0; p < w.poi_location.size(); ++p) {
      const LatLon ll = unproject(w.poi_location[p], g);
      const int district = w.district_of(w.poi_location[p]);
      const std::string prefix = "poi" + std::to_string(p) + "," + csv::quote(names[static_cast<std::size_t>(w.poi_category[p])]) +
                                 "," + detail::fixed7(ll.lat) + "," + detail::fixed7(ll.lon) + ",";
      for (int wk = 0; wk < weeks; ++wk) {
        std::string hours = "[";
        for (int h = 0; h < kHoursPerWeek; ++h) {
          const int day = std::min(wk * 7 + h / 24, cfg.span_days - 1);
          const int hod = h % 24;
          const double profile = (hod >= 8 && hod < 22) ? 1.5 : 0.25;
          const double mean = cfg.visits_per_hour * w.poi_scale[p] * profile *
                              w.activity[static_cast<std::size_t>(district)][static_cast<std::size_t>(day)];
          hours += (h ? "," : "") + std::to_string(vr.poisson(mean));
        }
        hours += "]";
        out += prefix + format_date(cfg.start() + days_to_seconds(wk * 7)) + "," + csv::quote(hours) + "\n";
      }
    }
    files.poi_visits_csv = std::move(out);
  }

  // Events: Poisson count per (block, cell), uniform position and time
  // within both. Positions keep clear of cell edges so rounding to 7
  // decimals cannot move an event into a neighbour.
  {
    std::string out = "# format_version=" + std::to_string(kIngestFormatVersion) + "\ntimestamp,category,lat,lon\n";
    Rng er(derive_seed(cfg.seed, detail::kStreamEvents));
    static constexpr std::array<double, 5> kCategoryWeights = {0.25, 0.2, 0.4, 0.02, 0.13};
    for (int b = 0; b < cfg.n_blocks(); ++b) {
      for (int r = 0; r < cfg.rows; ++r)
        for (int c = 0; c < cfg.cols; ++c) {
          const auto n = er.poisson(w.rate(r, c, b));
          for (std::uint64_t k = 0; k < n; ++k) {
            const Vec2 p{(c + er.uniform(0.01, 0.99)) * side, (r + er.uniform(0.01, 0.99)) * side};
            const LatLon ll = unproject(p, g);
            const UtcSeconds t = clock.block_start(b) + static_cast<UtcSeconds>(er.below(kSecondsPerBlock));
            double u = er.uniform();
            std::size_t cat = 0;
            while (cat + 1 < kCategoryWeights.size() && u >= kCategoryWeights[cat]) u -= kCategoryWeights[cat++];
            out += format_iso8601(t) + "," + std::string(kCrimeCategoryNames[cat]) + "," + detail::fixed7(ll.lat) +
                   "," + detail::fixed7(ll.lon) + "\n";
          }
        }
    }
    files.events_csv = std::move(out);
  }
  return files;
}

inline void write_synth(const SynthFiles& files, const std::filesystem::path& dir) {
  io::write_file_atomic(dir / "events.csv", files.events_csv);
  io::write_file_atomic(dir / "poi_visits.csv", files.poi_visits_csv);
  io::write_file_atomic(dir / "block_groups.geojson", files.block_groups_geojson);
  io::write_file_atomic(dir / "boundary.geojson", files.boundary_geojson);
  io::write_file_atomic(dir / "water.geojson", files.water_geojson);
}

}  // namespace gridcast
