#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "geometry.hpp"

namespace gridcast {

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Polygon in geographic coordinates: outer ring first, holes after.
struct GeoPolygon {
  std::vector<std::vector<LatLon>> rings;
};

inline constexpr double kMetersPerDegreeLat = 110574.0;
inline constexpr double kMetersPerDegreeLonEquator = 111320.0;
inline constexpr double kDefaultCellArea = 200000.0;  // 0.2 km^2, about 0.077 sq mi

/// Square-cell grid anchored at the south-west corner. Row 0 is the southern
/// row and column 0 the western column; n_rows may differ from n_cols.
struct GridSpec {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_side_m = 0.0;
  int n_rows = 0;
  int n_cols = 0;
  double centroid_lat = 0.0;

  double cell_area() const { return cell_side_m * cell_side_m; }
  std::size_t cell_count() const { return static_cast<std::size_t>(n_rows) * static_cast<std::size_t>(n_cols); }

  void validate() const {
    require(n_rows >= 1 && n_cols >= 1, "grid must have at least one row and column");
    require(cell_side_m > 0.0 && std::isfinite(cell_side_m), "cell side must be positive");
    require(std::abs(centroid_lat) < 90.0, "projection latitude out of range");
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct CellIndex {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// Row-major inclusion flags; true means the cell takes part in the analysis.
class SpatialMask {
 public:
  SpatialMask() = default;
  SpatialMask(int n_rows, int n_cols, bool value)
      : n_rows_(n_rows), n_cols_(n_cols), included_(static_cast<std::size_t>(n_rows) * n_cols, value ? 1 : 0) {}

  static SpatialMask all(const GridSpec& spec) { return SpatialMask(spec.n_rows, spec.n_cols, true); }

  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }
  bool included(int row, int col) const { return included_[index(row, col)] != 0; }
  bool included(CellIndex c) const { return included(c.row, c.col); }
  void set(int row, int col, bool value) { included_[index(row, col)] = value ? 1 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(included_.begin(), included_.end(), 1)); }
  std::span<const unsigned char> flags() const { return included_; }

  friend bool operator==(const SpatialMask&, const SpatialMask&) = default;

 private:
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * n_cols_ + col; }

  int n_rows_ = 0;
  int n_cols_ = 0;
  std::vector<unsigned char> included_;
};

/// Local equirectangular projection about spec.centroid_lat.
inline Vec2 project(double lat, double lon, const GridSpec& spec) {
  const double k = kMetersPerDegreeLonEquator * std::cos(spec.centroid_lat * std::numbers::pi / 180.0);
  return {(lon - spec.origin_lon) * k, (lat - spec.origin_lat) * kMetersPerDegreeLat};
}

inline LatLon unproject(Vec2 p, const GridSpec& spec) {
  const double k = kMetersPerDegreeLonEquator * std::cos(spec.centroid_lat * std::numbers::pi / 180.0);
  return {spec.origin_lat + p.y / kMetersPerDegreeLat, spec.origin_lon + p.x / k};
}

inline Polygon project(const GeoPolygon& geo, const GridSpec& spec) {
  Polygon poly;
  poly.rings.reserve(geo.rings.size());
  for (const auto& ring : geo.rings) {
    Ring& out = poly.rings.emplace_back();
    out.reserve(ring.size());
    for (LatLon p : ring) out.push_back(project(p.lat, p.lon, spec));
  }
  return poly;
}

inline Box cell_box(CellIndex cell, const GridSpec& spec) {
  const double s = spec.cell_side_m;
  return {cell.col * s, cell.row * s, (cell.col + 1) * s, (cell.row + 1) * s};
}

inline Vec2 cell_center(CellIndex cell, const GridSpec& spec) {
  return {(cell.col + 0.5) * spec.cell_side_m, (cell.row + 0.5) * spec.cell_side_m};
}

/// Floor convention: a point on a shared edge belongs to the higher-index
/// cell; points on the outer north or east edge are outside.
inline std::optional<CellIndex> cell_of(Vec2 p, const GridSpec& spec) {
  const double r = std::floor(p.y / spec.cell_side_m);
  const double c = std::floor(p.x / spec.cell_side_m);
  if (!(r >= 0.0 && c >= 0.0 && r < spec.n_rows && c < spec.n_cols)) return std::nullopt;
  return CellIndex{static_cast<int>(r), static_cast<int>(c)};
}

inline std::optional<CellIndex> cell_of(double lat, double lon, const GridSpec& spec) {
  return cell_of(project(lat, lon, spec), spec);
}

inline bool in_grid(CellIndex c, int n_rows, int n_cols) {
  return c.row >= 0 && c.col >= 0 && c.row < n_rows && c.col < n_cols;
}

/// In-grid cells at Chebyshev distance exactly 1, in row-major order.
inline std::vector<CellIndex> chebyshev_neighbors(CellIndex cell, int n_rows, int n_cols) {
  require(in_grid(cell, n_rows, n_cols), "cell (", cell.row, ", ", cell.col, ") is outside the ", n_rows, "x",
          n_cols, " grid");
  std::vector<CellIndex> out;
  out.reserve(8);
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const CellIndex n{cell.row + dr, cell.col + dc};
      if (in_grid(n, n_rows, n_cols)) out.push_back(n);
    }
  }
  return out;
}

inline std::vector<CellIndex> chebyshev_neighbors(CellIndex cell, const GridSpec& spec) {
  return chebyshev_neighbors(cell, spec.n_rows, spec.n_cols);
}

/// Smallest grid of square cells of area `target_cell_area` whose extent
/// covers the bounding box of `boundary`.
inline GridSpec grid_spec_for_boundary(std::span<const GeoPolygon> boundary, double target_cell_area = kDefaultCellArea) {
  require(target_cell_area > 0.0 && std::isfinite(target_cell_area), "target cell area must be positive");
  require(!boundary.empty(), "boundary has no polygons");
  double min_lat = 90.0, max_lat = -90.0, min_lon = 180.0, max_lon = -180.0;
  std::size_t vertices = 0;
  for (const GeoPolygon& poly : boundary) {
    for (const auto& ring : poly.rings) {
      for (LatLon p : ring) {
        require(std::abs(p.lat) <= 90.0 && std::abs(p.lon) <= 180.0, "boundary coordinate out of range");
        min_lat = std::min(min_lat, p.lat);
        max_lat = std::max(max_lat, p.lat);
        min_lon = std::min(min_lon, p.lon);
        max_lon = std::max(max_lon, p.lon);
        ++vertices;
      }
    }
  }
  require(vertices >= 3, "boundary polygon needs at least 3 vertices");

  GridSpec spec;
  spec.origin_lat = min_lat;
  spec.origin_lon = min_lon;
  spec.centroid_lat = 0.5 * (min_lat + max_lat);
  spec.cell_side_m = std::sqrt(target_cell_area);
  spec.n_rows = 1;
  spec.n_cols = 1;

  double area = 0.0;
  for (const GeoPolygon& poly : boundary) area += polygon_area(project(poly, spec));
  require(area > 0.0, "degenerate boundary: polygon has zero area");

  const Vec2 extent = project(max_lat, max_lon, spec);
  // Round-off from the degree round trip must not add a spurious row or column.
  constexpr double kSlack = 1e-9;
  spec.n_cols = std::max(1, static_cast<int>(std::ceil(extent.x / spec.cell_side_m - kSlack)));
  spec.n_rows = std::max(1, static_cast<int>(std::ceil(extent.y / spec.cell_side_m - kSlack)));
  return spec;
}

namespace detail {

inline std::vector<const Polygon*> overlapping(const Box& box, const std::vector<Polygon>& polys,
                                               const std::vector<Box>& boxes) {
  std::vector<const Polygon*> out;
  for (std::size_t i = 0; i < polys.size(); ++i)
    if (boxes[i].overlaps(box)) out.push_back(&polys[i]);
  return out;
}

inline std::vector<Box> boxes_of(const std::vector<Polygon>& polys) {
  std::vector<Box> out;
  out.reserve(polys.size());
  for (const Polygon& p : polys) out.push_back(bounding_box(p));
  return out;
}

inline std::vector<Polygon> project_all(std::span<const GeoPolygon> geo, const GridSpec& spec) {
  std::vector<Polygon> out;
  out.reserve(geo.size());
  for (const GeoPolygon& g : geo) out.push_back(project(g, spec));
  return out;
}

}  // namespace detail

/// Relative area below which an overlap counts as mere contact.
inline constexpr double kAreaTolerance = 1e-9;

/// Excludes cells outside the city, cells entirely covered by water, and
/// cells touching no block group. Overlaps are measured as positive area on
/// the projected plane.
inline SpatialMask build_mask(const GridSpec& spec, std::span<const GeoPolygon> city, std::span<const GeoPolygon> water,
                              std::span<const GeoPolygon> block_groups) {
  spec.validate();
  require(!block_groups.empty(), "no block-group polygons supplied");
  const auto city_p = detail::project_all(city, spec);
  const auto water_p = detail::project_all(water, spec);
  const auto groups_p = detail::project_all(block_groups, spec);
  const auto city_b = detail::boxes_of(city_p);
  const auto water_b = detail::boxes_of(water_p);
  const auto groups_b = detail::boxes_of(groups_p);

  const double cell_area = spec.cell_area();
  const double eps = kAreaTolerance * cell_area;
  SpatialMask mask(spec.n_rows, spec.n_cols, false);
  for (int r = 0; r < spec.n_rows; ++r) {
    for (int c = 0; c < spec.n_cols; ++c) {
      const Box box = cell_box({r, c}, spec);
      const auto in_city = detail::overlapping(box, city_p, city_b);
      if (in_city.empty() || covered_area(box, in_city) <= eps) continue;

      const auto wet = detail::overlapping(box, water_p, water_b);
      if (!wet.empty() && covered_area(box, wet) >= cell_area - eps) continue;

      const auto groups = detail::overlapping(box, groups_p, groups_b);
      const bool touches_group = std::any_of(groups.begin(), groups.end(),
                                             [&](const Polygon* g) { return covered_area(box, *g) > eps; });
      if (!touches_group) continue;
      mask.set(r, c, true);
    }
  }
  require(mask.count() > 0, "spatial mask is empty: no cell lies inside the city, on land, and within a block group");
  return mask;
}

inline constexpr int kGridFormatVersion = 1;

inline nlohmann::json to_json(const GridSpec& spec, const SpatialMask& mask) {
  nlohmann::json j;
  j["format_version"] = kGridFormatVersion;
  j["origin_lat"] = spec.origin_lat;
  j["origin_lon"] = spec.origin_lon;
  j["cell_side_m"] = spec.cell_side_m;
  j["n_rows"] = spec.n_rows;
  j["n_cols"] = spec.n_cols;
  j["centroid_lat"] = spec.centroid_lat;
  auto rows = nlohmann::json::array();
  for (int r = 0; r < mask.n_rows(); ++r) {
    std::string line(static_cast<std::size_t>(mask.n_cols()), '0');
    for (int c = 0; c < mask.n_cols(); ++c)
      if (mask.included(r, c)) line[static_cast<std::size_t>(c)] = '1';
    rows.push_back(line);
  }
  j["mask"] = rows;
  return j;
}

struct GridDocument {
  GridSpec spec;
  SpatialMask mask;
};

inline GridDocument grid_from_json(const nlohmann::json& j) {
  require(j.contains("format_version") && j["format_version"] == kGridFormatVersion,
          "unsupported grid document format_version");
  GridDocument doc;
  doc.spec.origin_lat = j.at("origin_lat").get<double>();
  doc.spec.origin_lon = j.at("origin_lon").get<double>();
  doc.spec.cell_side_m = j.at("cell_side_m").get<double>();
  doc.spec.n_rows = j.at("n_rows").get<int>();
  doc.spec.n_cols = j.at("n_cols").get<int>();
  doc.spec.centroid_lat = j.at("centroid_lat").get<double>();
  doc.spec.validate();
  const auto& rows = j.at("mask");
  require(rows.size() == static_cast<std::size_t>(doc.spec.n_rows), "mask row count does not match grid");
  doc.mask = SpatialMask(doc.spec.n_rows, doc.spec.n_cols, false);
  for (int r = 0; r < doc.spec.n_rows; ++r) {
    const auto line = rows[static_cast<std::size_t>(r)].get<std::string>();
    require(line.size() == static_cast<std::size_t>(doc.spec.n_cols), "mask row ", r, " has wrong width");
    for (int c = 0; c < doc.spec.n_cols; ++c) doc.mask.set(r, c, line[static_cast<std::size_t>(c)] == '1');
  }
  require(doc.mask.count() > 0, "grid document has an empty mask");
  return doc;
}

}  // namespace gridcast
