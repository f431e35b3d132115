#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "geo_grid.hpp"
#include "geojson.hpp"
#include "poi_categories.hpp"
#include "timeutil.hpp"

namespace gridcast {

inline constexpr int kIngestFormatVersion = 1;

// ---------------------------------------------------------------------------
// Events

enum class CrimeCategory : std::uint8_t { kBurglary, kMotorVehicleTheft, kAssault, kHomicide, kRobbery };

inline constexpr std::array<std::string_view, 5> kCrimeCategoryNames = {"burglary", "mvt", "assault", "homicide",
                                                                        "robbery"};

inline std::string_view to_string(CrimeCategory c) { return kCrimeCategoryNames[static_cast<std::size_t>(c)]; }

inline std::optional<CrimeCategory> parse_crime_category(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  for (std::size_t i = 0; i < kCrimeCategoryNames.size(); ++i)
    if (lower == kCrimeCategoryNames[i]) return static_cast<CrimeCategory>(i);
  if (lower == "motor vehicle theft" || lower == "motor_vehicle_theft") return CrimeCategory::kMotorVehicleTheft;
  return std::nullopt;
}

/// Bit set over CrimeCategory.
class CrimeSubset {
 public:
  constexpr CrimeSubset() = default;
  constexpr explicit CrimeSubset(std::uint8_t bits) : bits_(bits) {}

  static constexpr CrimeSubset all() { return CrimeSubset(0x1F); }
  static constexpr CrimeSubset violent() {
    return CrimeSubset(bit(CrimeCategory::kAssault) | bit(CrimeCategory::kHomicide) | bit(CrimeCategory::kRobbery));
  }
  static constexpr CrimeSubset property() {
    return CrimeSubset(bit(CrimeCategory::kBurglary) | bit(CrimeCategory::kMotorVehicleTheft));
  }
  static CrimeSubset parse(std::string_view name) {
    if (name == "all") return all();
    if (name == "violent") return violent();
    if (name == "property") return property();
    fail("unknown crime subset '", name, "' (expected all, violent, or property)");
  }

  constexpr bool contains(CrimeCategory c) const { return (bits_ & bit(c)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr CrimeSubset with(CrimeCategory c) const { return CrimeSubset(static_cast<std::uint8_t>(bits_ | bit(c))); }

 private:
  static constexpr std::uint8_t bit(CrimeCategory c) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(c)); }
  std::uint8_t bits_ = 0;
};

struct EventRecord {
  UtcSeconds timestamp = 0;
  CrimeCategory category = CrimeCategory::kAssault;
  double lat = 0.0;
  double lon = 0.0;
};

struct ParseOptions {
  /// Reject the file when more than this fraction of data rows is malformed.
  double max_bad_fraction = 0.10;
};

template <typename Record>
struct ParseResult {
  std::vector<Record> records;
  std::size_t malformed = 0;   // unparsable fields
  std::size_t unmatched = 0;   // well-formed rows outside the accepted vocabulary
  std::size_t total_rows = 0;
  std::size_t skipped() const { return malformed + unmatched; }
};

namespace detail {

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline bool valid_lat_lon(double lat, double lon) { return std::abs(lat) <= 90.0 && std::abs(lon) <= 180.0; }

inline std::vector<std::size_t> header_columns(const std::string& header, std::initializer_list<std::string_view> names,
                                               std::string_view what) {
  const auto cols = csv::split(header);
  require(cols.has_value(), what, ": malformed header");
  std::vector<std::size_t> idx;
  for (std::string_view name : names) {
    const auto it = std::find(cols->begin(), cols->end(), name);
    require(it != cols->end(), what, ": header lacks column '", name, "'");
    idx.push_back(static_cast<std::size_t>(it - cols->begin()));
  }
  return idx;
}

template <typename Record>
void check_bad_fraction(const ParseResult<Record>& r, const ParseOptions& opt, std::string_view what) {
  if (r.total_rows == 0) return;
  const double frac = static_cast<double>(r.malformed) / static_cast<double>(r.total_rows);
  require(frac <= opt.max_bad_fraction, what, ": ", r.malformed, " of ", r.total_rows,
          " rows are malformed, above the tolerated fraction ", opt.max_bad_fraction);
}

}  // namespace detail

/// CSV with header `timestamp,category,lat,lon`. Rows naming a category
/// outside the five tracked ones are skipped as unmatched; rows with
/// unparsable fields are skipped as malformed and count towards the
/// rejection threshold.
inline ParseResult<EventRecord> parse_events(std::istream& in, const ParseOptions& opt = {}) {
  const auto header = csv::read_header(in, kIngestFormatVersion, "events");
  const auto idx = detail::header_columns(header, {"timestamp", "category", "lat", "lon"}, "events");
  const std::size_t width = *std::max_element(idx.begin(), idx.end()) + 1;

  ParseResult<EventRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    csv::strip_cr(line);
    if (line.empty()) continue;
    ++out.total_rows;
    const auto fields = csv::split(line);
    if (!fields || fields->size() < width) {
      ++out.malformed;
      continue;
    }
    const auto ts = parse_iso8601((*fields)[idx[0]]);
    const auto lat = detail::parse_double((*fields)[idx[2]]);
    const auto lon = detail::parse_double((*fields)[idx[3]]);
    if (!ts || !lat || !lon || !detail::valid_lat_lon(*lat, *lon)) {
      ++out.malformed;
      continue;
    }
    const auto cat = parse_crime_category((*fields)[idx[1]]);
    if (!cat) {
      ++out.unmatched;
      continue;
    }
    out.records.push_back({*ts, *cat, *lat, *lon});
  }
  detail::check_bad_fraction(out, opt, "events");
  return out;
}

// ---------------------------------------------------------------------------
// POI visits

struct PoiVisitRecord {
  std::string poi_id;
  std::string top_category;
  int category_id = kOtherServicesCategory;
  double lat = 0.0;
  double lon = 0.0;
  UtcSeconds week_start = 0;  // local midnight of the first day, as a UTC instant
  std::array<std::uint32_t, kHoursPerWeek> hourly_visits{};
};

struct PoiParseOptions : ParseOptions {
  CategoryFallback fallback = CategoryFallback::kLenient;
  int utc_offset_hours = 0;  // local time of week_start relative to UTC
};

/// CSV with header `poi_id,top_category,lat,lon,week_start,hourly_visits`;
/// `hourly_visits` is a quoted JSON array of 168 non-negative integers.
inline ParseResult<PoiVisitRecord> parse_poi_visits(std::istream& in, const PoiParseOptions& opt = {}) {
  const auto header = csv::read_header(in, kIngestFormatVersion, "POI visits");
  const auto idx = detail::header_columns(header, {"poi_id", "top_category", "lat", "lon", "week_start", "hourly_visits"},
                                          "POI visits");
  const std::size_t width = *std::max_element(idx.begin(), idx.end()) + 1;

  ParseResult<PoiVisitRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    csv::strip_cr(line);
    if (line.empty()) continue;
    ++out.total_rows;
    const auto fields = csv::split(line);
    if (!fields || fields->size() < width) {
      ++out.malformed;
      continue;
    }
    PoiVisitRecord rec;
    rec.poi_id = (*fields)[idx[0]];
    rec.top_category = (*fields)[idx[1]];
    const auto lat = detail::parse_double((*fields)[idx[2]]);
    const auto lon = detail::parse_double((*fields)[idx[3]]);
    auto week = parse_date((*fields)[idx[4]]);
    if (!week) week = parse_iso8601((*fields)[idx[4]]);
    if (rec.poi_id.empty() || !lat || !lon || !week || !detail::valid_lat_lon(*lat, *lon)) {
      ++out.malformed;
      continue;
    }
    bool ok = true;
    try {
      const auto arr = nlohmann::json::parse((*fields)[idx[5]]);
      if (!arr.is_array() || arr.size() != kHoursPerWeek) {
        ok = false;
      } else {
        for (std::size_t h = 0; h < kHoursPerWeek && ok; ++h) {
          if (!arr[h].is_number_integer() || arr[h].get<std::int64_t>() < 0 ||
              arr[h].get<std::int64_t>() > std::numeric_limits<std::uint32_t>::max()) {
            ok = false;
          } else {
            rec.hourly_visits[h] = static_cast<std::uint32_t>(arr[h].get<std::int64_t>());
          }
        }
      }
    } catch (const nlohmann::json::exception&) {
      ok = false;
    }
    if (!ok) {
      ++out.malformed;
      continue;
    }
    rec.lat = *lat;
    rec.lon = *lon;
    rec.week_start = *week - static_cast<UtcSeconds>(opt.utc_offset_hours) * 3600;
    rec.category_id = map_top_category(rec.top_category, opt.fallback).id;
    out.records.push_back(std::move(rec));
  }
  detail::check_bad_fraction(out, opt, "POI visits");
  return out;
}

struct BlockVisits {
  int block_index = 0;
  std::uint64_t visits = 0;
};

/// Sums the 168 hourly counts into 14 consecutive half-day blocks. Block
/// indices are relative to `block_origin`, which must sit on a 12-hour
/// boundary of the week.
inline std::array<BlockVisits, kHoursPerWeek / kHoursPerBlock> visits_to_halfday_blocks(const PoiVisitRecord& rec,
                                                                                       UtcSeconds block_origin) {
  const UtcSeconds delta = rec.week_start - block_origin;
  require(delta >= 0, "POI ", rec.poi_id, ": week starts before the block origin");
  require(delta % kSecondsPerBlock == 0, "POI ", rec.poi_id, ": block origin is not aligned to a 12-hour boundary of the week");
  const int first = static_cast<int>(delta / kSecondsPerBlock);
  std::array<BlockVisits, kHoursPerWeek / kHoursPerBlock> out{};
  for (int b = 0; b < kHoursPerWeek / kHoursPerBlock; ++b) {
    std::uint64_t sum = 0;
    for (int h = 0; h < kHoursPerBlock; ++h) sum += rec.hourly_visits[static_cast<std::size_t>(b * kHoursPerBlock + h)];
    out[static_cast<std::size_t>(b)] = {first + b, sum};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sociodemographics

inline constexpr int kSociodemoCount = 26;

/// Property names expected on each block-group feature, in channel order.
inline constexpr std::array<std::string_view, kSociodemoCount> kSociodemoNames = {
    "pct_female",
    "median_age_male",
    "median_age_female",
    "pct_white",
    "pct_black",
    "pct_american_indian_alaska_native",
    "pct_asian",
    "pct_native_hawaiian_other",
    "pct_other_race",
    "pct_employed",
    "pct_unemployed",
    "pct_armed_forces",
    "pct_not_in_labor_force",
    "median_household_income",
    "pct_no_schooling",
    "pct_high_school_diploma",
    "pct_bachelors_degree",
    "pct_professional_degree",
    "pct_male_never_married",
    "pct_male_married",
    "pct_male_widowed",
    "pct_male_divorced",
    "pct_female_never_married",
    "pct_female_married",
    "pct_female_widowed",
    "pct_female_divorced",
};

inline bool is_percentage_variable(std::size_t i) { return kSociodemoNames[i].starts_with("pct_"); }

struct BlockGroupRecord {
  std::vector<GeoPolygon> geometry;
  int year = 0;
  std::array<double, kSociodemoCount> values{};  // NaN when absent
};

/// GeoJSON FeatureCollection of block groups. Absent or null properties
/// become NaN. Features with invalid geometry (too few vertices, zero area,
/// self-intersection) or out-of-range percentages are skipped and counted.
inline ParseResult<BlockGroupRecord> parse_block_groups(std::istream& in, int year) {
  ParseResult<BlockGroupRecord> out;
  std::size_t bad_geometry = 0;
  auto features = read_geojson(in, &bad_geometry);
  out.total_rows = features.size() + bad_geometry;
  out.malformed = bad_geometry;
  for (auto& f : features) {
    bool valid = !f.parts.empty();
    for (const GeoPolygon& part : f.parts) {
      Polygon planar;
      for (const auto& ring : part.rings) {
        Ring& r = planar.rings.emplace_back();
        for (LatLon p : ring) r.push_back({p.lon, p.lat});
      }
      if (!polygon_is_valid(planar)) valid = false;
    }
    BlockGroupRecord rec;
    rec.year = year;
    for (std::size_t i = 0; i < kSociodemoNames.size() && valid; ++i) {
      const std::string key(kSociodemoNames[i]);
      double v = std::numeric_limits<double>::quiet_NaN();
      if (f.properties.contains(key) && f.properties[key].is_number()) v = f.properties[key].get<double>();
      if (!std::isnan(v) && (!std::isfinite(v) || (is_percentage_variable(i) && (v < 0.0 || v > 100.0)))) valid = false;
      rec.values[i] = v;
    }
    if (!valid) {
      ++out.malformed;
      continue;
    }
    rec.geometry = std::move(f.parts);
    out.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct CityStats {
  double area_km2 = 0.0;
  double population_density_per_km2 = 0.0;
  double poi_count = 0.0;
};

/// Population density over POI density: people per POI.
inline double people_to_poi_ratio(const CityStats& s) {
  require(s.poi_count > 0.0, "people-to-POI ratio undefined: city has no POIs");
  require(s.area_km2 > 0.0, "people-to-POI ratio undefined: city area must be positive");
  require(s.population_density_per_km2 > 0.0, "population density must be positive");
  return s.population_density_per_km2 / (s.poi_count / s.area_km2);
}

}  // namespace gridcast
