#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <gridcast/gridcast.hpp>

using namespace gridcast;

namespace {

SynthConfig small_config(std::uint64_t seed = 3) {
  SynthConfig c;
  c.seed = seed;
  c.span_days = 20;
  c.pois = 60;
  return c;
}

std::vector<EventRecord> events_of(const SynthFiles& f) {
  std::istringstream in(f.events_csv);
  const auto r = parse_events(in);
  EXPECT_EQ(r.skipped(), 0u);
  return r.records;
}

std::vector<double> counts_per_cell(const std::vector<EventRecord>& events, const GridSpec& g) {
  std::vector<double> n(static_cast<std::size_t>(g.n_rows) * g.n_cols, 0.0);
  for (const auto& e : events) {
    const auto c = cell_of(e.lat, e.lon, g);
    EXPECT_TRUE(c.has_value());
    if (c) n[static_cast<std::size_t>(c->row) * g.n_cols + c->col] += 1;
  }
  return n;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Synth, FlatIntensityIsUniformAcrossCells) {
  SynthConfig c = small_config();
  c.hotspots = 0;
  c.coupling = 0.0;
  c.base_rate = 0.1;
  const auto n = counts_per_cell(events_of(generate(c)), synth_grid(c));
  double total = 0;
  for (double v : n) total += v;
  const double expected = total / static_cast<double>(n.size());
  double chi2 = 0;
  for (double v : n) chi2 += (v - expected) * (v - expected) / expected;
  // Wilson-Hilferty upper 1% point of chi-square with k degrees of freedom.
  const double k = static_cast<double>(n.size() - 1);
  const double crit = k * std::pow(1 - 2 / (9 * k) + 2.3263478740 * std::sqrt(2 / (9 * k)), 3);
  EXPECT_LT(chi2, crit);
  EXPECT_GT(total, 3000);
}

TEST(Synth, ZeroIntensityGivesHeaderOnlyEvents) {
  SynthConfig c = small_config();
  c.hotspots = 0;
  c.base_rate = 0.0;
  const auto f = generate(c);
  EXPECT_EQ(std::count(f.events_csv.begin(), f.events_csv.end(), '\n'), 2);
  EXPECT_TRUE(events_of(f).empty());
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = generate(small_config(5));
  const auto b = generate(small_config(5));
  EXPECT_EQ(a.events_csv, b.events_csv);
  EXPECT_EQ(a.poi_visits_csv, b.poi_visits_csv);
  EXPECT_EQ(a.block_groups_geojson, b.block_groups_geojson);
  EXPECT_EQ(a.boundary_geojson, b.boundary_geojson);
  EXPECT_EQ(a.water_geojson, b.water_geojson);
  EXPECT_NE(a.events_csv, generate(small_config(6)).events_csv);
}

TEST(Synth, OutputsParseThroughIngest) {
  const auto f = generate(small_config());
  std::istringstream poi(f.poi_visits_csv), bg(f.block_groups_geojson);
  const auto p = parse_poi_visits(poi);
  EXPECT_EQ(p.skipped(), 0u);
  EXPECT_EQ(p.records.size(), 60u * 3);  // 20 days -> 3 weeks per POI
  const auto g = parse_block_groups(bg, 2019);
  EXPECT_EQ(g.skipped(), 0u);
  EXPECT_EQ(g.records.size(), 16u);
  std::istringstream boundary(f.boundary_geojson);
  EXPECT_EQ(read_polygons(boundary).size(), 1u);
}

TEST(Synth, SingleHotspotIsTheArgmax) {
  SynthConfig c = small_config();
  c.hotspots = 1;
  const SynthWorld w = build_world(c);
  const auto rates = ground_truth_rates(c);
  const auto& layer = rates[5];
  const auto best = static_cast<int>(std::max_element(layer.begin(), layer.end()) - layer.begin());
  const auto cell = cell_of(w.hotspots[0], w.grid);
  ASSERT_TRUE(cell.has_value());
  EXPECT_EQ(best / c.cols, cell->row);
  EXPECT_EQ(best % c.cols, cell->col);
}

TEST(Synth, DayNightRatio) {
  SynthConfig c = small_config();
  c.day_night_ratio = 2.0;
  const auto rates = ground_truth_rates(c);
  for (int day = 0; day < c.span_days; ++day)
    for (std::size_t i = 0; i < rates[0].size(); i += 37)
      EXPECT_NEAR(rates[2 * day + 1][i] / rates[2 * day][i], 2.0, 1e-12);
}

TEST(Synth, EventTotalsMatchTheIntensity) {
  const SynthConfig c = small_config(8);
  double lambda = 0;
  for (const auto& layer : ground_truth_rates(c))
    for (double v : layer) lambda += v;
  const double n = static_cast<double>(events_of(generate(c)).size());
  EXPECT_LT(std::abs(n - lambda), 3 * std::sqrt(lambda));
}

TEST(Synth, CouplingRaisesFootfallCrimeCorrelation) {
  std::vector<double> corr;
  for (double k : {0.0, 0.5, 1.0}) {
    SynthConfig c = small_config(4);
    c.coupling = k;
    c.pois = 300;
    const auto f = generate(c);
    const GridSpec g = synth_grid(c);
    const auto crimes = counts_per_cell(events_of(f), g);
    std::istringstream in(f.poi_visits_csv);
    std::vector<double> foot(crimes.size(), 0.0);
    for (const auto& r : parse_poi_visits(in).records) {
      const auto cell = cell_of(r.lat, r.lon, g);
      if (!cell) continue;
      for (auto v : r.hourly_visits) foot[static_cast<std::size_t>(cell->row) * g.n_cols + cell->col] += v;
    }
    corr.push_back(pearson(foot, crimes));
  }
  EXPECT_LT(corr[0], corr[1]);
  EXPECT_LT(corr[1], corr[2]);
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig c = small_config();
  c.coupling = 1.5;
  EXPECT_THROW(generate(c), Error);
  c = small_config();
  c.rows = 8;
  EXPECT_THROW(generate(c), Error);
  c = small_config();
  c.hotspot_intensity = -1;
  EXPECT_THROW(generate(c), Error);
}

TEST(Synth, ConfigJsonRoundTrip) {
  SynthConfig c = small_config(77);
  c.hotspot_radius_m = 321.5;
  EXPECT_EQ(to_json(synth_config_from_json(to_json(c))).dump(), to_json(c).dump());
}
