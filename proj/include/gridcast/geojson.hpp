#pragma once

#include <istream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "geo_grid.hpp"

namespace gridcast {

inline constexpr int kGeoJsonFormatVersion = 1;

struct GeoFeature {
  std::vector<GeoPolygon> parts;  // one per Polygon, several for a MultiPolygon
  nlohmann::json properties = nlohmann::json::object();
};

namespace detail {

inline std::vector<LatLon> parse_ring(const nlohmann::json& coords) {
  require(coords.is_array(), "GeoJSON ring is not an array");
  std::vector<LatLon> ring;
  ring.reserve(coords.size());
  for (const auto& pos : coords) {
    require(pos.is_array() && pos.size() >= 2 && pos[0].is_number() && pos[1].is_number(),
            "GeoJSON position must be [lon, lat]");
    ring.push_back({pos[1].get<double>(), pos[0].get<double>()});
  }
  if (ring.size() >= 2 && ring.front().lat == ring.back().lat && ring.front().lon == ring.back().lon) ring.pop_back();
  return ring;
}

inline GeoPolygon parse_polygon(const nlohmann::json& coords) {
  require(coords.is_array() && !coords.empty(), "GeoJSON polygon has no rings");
  GeoPolygon poly;
  for (const auto& ring : coords) poly.rings.push_back(parse_ring(ring));
  return poly;
}

inline std::vector<GeoPolygon> parse_geometry(const nlohmann::json& geom) {
  require(geom.is_object() && geom.contains("type"), "GeoJSON geometry without a type");
  const auto type = geom["type"].get<std::string>();
  if (type == "Polygon") return {parse_polygon(geom.at("coordinates"))};
  if (type == "MultiPolygon") {
    std::vector<GeoPolygon> out;
    for (const auto& p : geom.at("coordinates")) out.push_back(parse_polygon(p));
    return out;
  }
  fail("unsupported GeoJSON geometry type '", type, "' (expected Polygon or MultiPolygon)");
}

}  // namespace detail

inline void check_format_version(const nlohmann::json& doc, int supported, const std::string& what) {
  if (doc.is_object() && doc.contains("format_version")) {
    require(doc["format_version"].is_number_integer() && doc["format_version"].get<int>() == supported, what,
            ": unsupported format_version ", doc["format_version"].dump());
  }
}

/// Reads a FeatureCollection, a single Feature, or a bare geometry. Features
/// whose geometry fails to parse are counted in `skipped` when it is given,
/// otherwise the error propagates.
inline std::vector<GeoFeature> read_geojson(std::istream& in, std::size_t* skipped = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail("invalid GeoJSON: ", e.what());
  }
  check_format_version(doc, kGeoJsonFormatVersion, "GeoJSON");
  require(doc.is_object() && doc.contains("type"), "GeoJSON document without a type");
  const auto type = doc["type"].get<std::string>();

  std::vector<GeoFeature> out;
  auto add_feature = [&](const nlohmann::json& feature) {
    GeoFeature f;
    try {
      f.parts = detail::parse_geometry(feature.at("geometry"));
    } catch (const std::exception&) {
      if (skipped == nullptr) throw;
      ++*skipped;
      return;
    }
    if (feature.contains("properties") && feature["properties"].is_object()) f.properties = feature["properties"];
    out.push_back(std::move(f));
  };

  if (type == "FeatureCollection") {
    for (const auto& feature : doc.at("features")) add_feature(feature);
  } else if (type == "Feature") {
    add_feature(doc);
  } else {
    GeoFeature f;
    f.parts = detail::parse_geometry(doc);
    out.push_back(std::move(f));
  }
  return out;
}

/// All polygons of all features, flattened.
inline std::vector<GeoPolygon> read_polygons(std::istream& in) {
  std::vector<GeoPolygon> out;
  for (auto& f : read_geojson(in))
    for (auto& p : f.parts) out.push_back(std::move(p));
  return out;
}

inline nlohmann::json geojson_polygon(const GeoPolygon& poly) {
  auto rings = nlohmann::json::array();
  for (const auto& ring : poly.rings) {
    auto coords = nlohmann::json::array();
    for (LatLon p : ring) coords.push_back({p.lon, p.lat});
    if (!ring.empty()) coords.push_back({ring.front().lon, ring.front().lat});
    rings.push_back(coords);
  }
  return {{"type", "Polygon"}, {"coordinates", rings}};
}

}  // namespace gridcast
