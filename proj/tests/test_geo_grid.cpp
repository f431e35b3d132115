#include <gtest/gtest.h>

#include <gridcast/gridcast.hpp>

#include "helpers.hpp"

using namespace gridcast;
using gridcast::testing::rect;
using gridcast::testing::square_grid;

namespace {

GeoPolygon box_deg(double lat0, double lon0, double lat1, double lon1) {
  GeoPolygon p;
  p.rings.push_back({{lat0, lon0}, {lat0, lon1}, {lat1, lon1}, {lat1, lon0}});
  return p;
}

// Bounding box of w x h metres anchored at (lat0, lon0), projected about its centre.
GeoPolygon box_m(double lat0, double lon0, double w, double h) {
  const double lat1 = lat0 + h / kMetersPerDegreeLat;
  const double mid = 0.5 * (lat0 + lat1);
  const double lon1 = lon0 + w / (kMetersPerDegreeLonEquator * std::cos(mid * std::numbers::pi / 180.0));
  return box_deg(lat0, lon0, lat1, lon1);
}

}  // namespace

TEST(GridSpec, SquareOfFourCellsGivesTwoByTwo) {
  const double side = std::sqrt(kDefaultCellArea);
  const std::vector<GeoPolygon> b{box_m(40.0, -75.0, 2 * side, 2 * side)};
  const auto spec = grid_spec_for_boundary(b);
  EXPECT_EQ(spec.n_rows, 2);
  EXPECT_EQ(spec.n_cols, 2);
  EXPECT_NEAR(spec.cell_area(), kDefaultCellArea, 1e-6);
}

TEST(GridSpec, CeilingAddsAColumnForOneExtraMetre) {
  const double side = std::sqrt(kDefaultCellArea);
  for (int k : {1, 3, 7}) {
    const std::vector<GeoPolygon> b{box_m(40.0, -75.0, k * side + 1.0, 2 * side)};
    EXPECT_EQ(grid_spec_for_boundary(b).n_cols, k + 1) << "k=" << k;
  }
}

TEST(GridSpec, CityScaleBox) {
  // 17.4 km east-west by 20 km north-south.
  const std::vector<GeoPolygon> b{box_m(39.87, -75.28, 17400.0, 20000.0)};
  const auto spec = grid_spec_for_boundary(b);
  EXPECT_EQ(spec.n_rows, 45);
  EXPECT_EQ(spec.n_cols, 39);
}

TEST(GridSpec, RejectsBadInputs) {
  const std::vector<GeoPolygon> b{box_m(40.0, -75.0, 1000, 1000)};
  EXPECT_THROW(grid_spec_for_boundary(b, 0.0), Error);
  EXPECT_THROW(grid_spec_for_boundary(std::vector<GeoPolygon>{}), Error);
  GeoPolygon flat;
  flat.rings.push_back({{40, -75}, {40, -74.99}, {40, -74.98}});
  EXPECT_THROW(grid_spec_for_boundary(std::vector<GeoPolygon>{flat}), Error);
}

TEST(Projection, OriginAndDegreeConstants) {
  GridSpec s = square_grid(4, 4);
  const Vec2 o = project(s.origin_lat, s.origin_lon, s);
  EXPECT_DOUBLE_EQ(o.x, 0.0);
  EXPECT_DOUBLE_EQ(o.y, 0.0);
  for (double centroid : {0.0, 35.0, 60.0}) {
    s.centroid_lat = centroid;
    EXPECT_NEAR(project(s.origin_lat + 1.0, s.origin_lon, s).y, 110574.0, 1e-6);
  }
  s.centroid_lat = 60.0;
  EXPECT_NEAR(project(s.origin_lat, s.origin_lon + 1.0, s).x, 55660.0, 1.0);
}

TEST(Projection, UnprojectInverts) {
  const GridSpec s = square_grid(4, 4);
  const Vec2 p{1234.5, -678.9};
  const Vec2 q = project(unproject(p, s).lat, unproject(p, s).lon, s);
  EXPECT_NEAR(q.x, p.x, 1e-6);
  EXPECT_NEAR(q.y, p.y, 1e-6);
}

TEST(CellOf, OriginEdgesAndCentres) {
  const GridSpec s = square_grid(5, 6);
  ASSERT_TRUE(cell_of(s.origin_lat, s.origin_lon, s));
  EXPECT_EQ(*cell_of(s.origin_lat, s.origin_lon, s), (CellIndex{0, 0}));
  const double north = s.n_rows * s.cell_side_m;
  const LatLon out = unproject({10.0, north + 1.0}, s);
  EXPECT_FALSE(cell_of(out.lat, out.lon, s));
  const LatLon west = unproject({-1.0, 10.0}, s);
  EXPECT_FALSE(cell_of(west.lat, west.lon, s));
  for (int r = 0; r < s.n_rows; ++r)
    for (int c = 0; c < s.n_cols; ++c) {
      const LatLon centre = unproject(cell_center({r, c}, s), s);
      EXPECT_EQ(*cell_of(centre.lat, centre.lon, s), (CellIndex{r, c}));
    }
}

TEST(Neighbors, CornerEdgeInterior) {
  EXPECT_EQ(chebyshev_neighbors({0, 0}, 16, 16).size(), 3u);
  EXPECT_EQ(chebyshev_neighbors({0, 5}, 16, 16).size(), 5u);
  EXPECT_EQ(chebyshev_neighbors({7, 7}, 16, 16).size(), 8u);
  EXPECT_EQ(chebyshev_neighbors({15, 15}, 16, 16).size(), 3u);
  EXPECT_THROW(chebyshev_neighbors({16, 0}, 16, 16), Error);
  for (const auto& n : chebyshev_neighbors({7, 7}, 16, 16))
    EXPECT_EQ(std::max(std::abs(n.row - 7), std::abs(n.col - 7)), 1);
}

TEST(Mask, InsideOutsideAndWater) {
  const GridSpec s = square_grid(4, 4);
  const double side = s.cell_side_m;
  // City covers the western three columns; the lake covers cell (3, 0) fully.
  const std::vector<GeoPolygon> city{rect(s, 0, 0, 3 * side, 4 * side)};
  const std::vector<GeoPolygon> lake{rect(s, -5, 3 * side - 5, side + 5, 4 * side + 5)};
  const std::vector<GeoPolygon> groups{rect(s, 0, 0, 4 * side, 4 * side)};
  const auto mask = build_mask(s, city, lake, groups);
  EXPECT_TRUE(mask.included(1, 1));
  EXPECT_FALSE(mask.included(1, 3));  // disjoint from the city
  EXPECT_FALSE(mask.included(3, 0));  // all water
  EXPECT_TRUE(mask.included(3, 1));   // lake only grazes it
  EXPECT_EQ(mask.count(), 11u);
}

TEST(Mask, PartialWaterStaysAndNoGroupIsExcluded) {
  const GridSpec s = square_grid(3, 3);
  const double side = s.cell_side_m;
  const std::vector<GeoPolygon> city{rect(s, 0, 0, 3 * side, 3 * side)};
  const std::vector<GeoPolygon> lake{rect(s, 0, 0, 0.5 * side, side)};
  const std::vector<GeoPolygon> groups{rect(s, 0, 0, 2 * side, 3 * side)};
  const auto mask = build_mask(s, city, lake, groups);
  EXPECT_TRUE(mask.included(0, 0));
  EXPECT_FALSE(mask.included(0, 2));
  EXPECT_EQ(mask.count(), 6u);
}

TEST(Mask, EmptyMaskIsAnError) {
  const GridSpec s = square_grid(3, 3);
  const double side = s.cell_side_m;
  const std::vector<GeoPolygon> city{rect(s, 10 * side, 10 * side, 11 * side, 11 * side)};
  const std::vector<GeoPolygon> groups{rect(s, 0, 0, 3 * side, 3 * side)};
  EXPECT_THROW(build_mask(s, city, {}, groups), Error);
}

TEST(GridDocument, JsonRoundTrip) {
  const GridSpec s = square_grid(3, 4);
  SpatialMask m(3, 4, true);
  m.set(1, 2, false);
  const auto doc = grid_from_json(nlohmann::json::parse(to_json(s, m).dump()));
  EXPECT_EQ(doc.spec, s);
  EXPECT_EQ(doc.mask, m);
}
