#include <gtest/gtest.h>

#include <sstream>

#include <gridcast/gridcast.hpp>

using namespace gridcast;

namespace {

std::string events_csv(std::initializer_list<const char*> rows) {
  std::string s = "# format_version=1\ntimestamp,category,lat,lon\n";
  for (const char* r : rows) s += std::string(r) + "\n";
  return s;
}

std::string hours_json(int value) {
  std::string s = "\"[";
  for (int h = 0; h < kHoursPerWeek; ++h) s += (h ? "," : "") + std::to_string(value);
  return s + "]\"";
}

nlohmann::json square_feature(double lat, double lon, double d, nlohmann::json props) {
  return {{"type", "Feature"},
          {"geometry",
           {{"type", "Polygon"},
            {"coordinates", {{{lon, lat}, {lon + d, lat}, {lon + d, lat + d}, {lon, lat + d}, {lon, lat}}}}}},
          {"properties", std::move(props)}};
}

}  // namespace

TEST(Events, ValidRows) {
  std::istringstream in(events_csv({"2019-01-01T10:00:00Z,assault,39.95,-75.16",
                                    "2019-01-01T11:00:00Z,burglary,39.96,-75.17",
                                    "2019-01-02T01:30:00Z,homicide,39.97,-75.18"}));
  const auto r = parse_events(in);
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.skipped(), 0u);
  EXPECT_EQ(r.records[1].category, CrimeCategory::kBurglary);
  EXPECT_DOUBLE_EQ(r.records[2].lat, 39.97);
}

TEST(Events, UntrackedCategoryIsSkipped) {
  std::istringstream in(events_csv({"2019-01-01T10:00:00Z,assault,39.95,-75.16",
                                    "2019-01-01T11:00:00Z,arson,39.96,-75.17"}));
  const auto r = parse_events(in);
  EXPECT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.unmatched, 1u);
  EXPECT_EQ(r.skipped(), 1u);
}

TEST(Events, TooManyMalformedRowsRejectsTheFile) {
  std::string s = "timestamp,category,lat,lon\n";
  for (int i = 0; i < 8; ++i) s += "2019-01-01T10:00:00Z,assault,39.95,-75.16\n";
  s += "not-a-time,assault,39.95,-75.16\n";
  s += "2019-01-01T10:00:00Z,assault,north,-75.16\n";
  std::istringstream in(s);
  EXPECT_THROW(parse_events(in), Error);
  std::istringstream again(s);
  EXPECT_EQ(parse_events(again, {.max_bad_fraction = 0.25}).records.size(), 8u);
}

TEST(Events, OneBadRowInTenIsTolerated) {
  std::string s = "timestamp,category,lat,lon\n";
  for (int i = 0; i < 9; ++i) s += "2019-01-01T10:00:00Z,robbery,39.95,-75.16\n";
  s += "2019-01-01T10:00:00Z,robbery,95.0,-75.16\n";
  std::istringstream in(s);
  const auto r = parse_events(in);
  EXPECT_EQ(r.records.size(), 9u);
  EXPECT_EQ(r.malformed, 1u);
}

TEST(Events, WrongFormatVersionIsRejected) {
  std::istringstream in("# format_version=2\ntimestamp,category,lat,lon\n");
  EXPECT_THROW(parse_events(in), Error);
}

TEST(CrimeSubsets, Groupings) {
  EXPECT_TRUE(CrimeSubset::violent().contains(CrimeCategory::kAssault));
  EXPECT_TRUE(CrimeSubset::violent().contains(CrimeCategory::kHomicide));
  EXPECT_TRUE(CrimeSubset::violent().contains(CrimeCategory::kRobbery));
  EXPECT_FALSE(CrimeSubset::violent().contains(CrimeCategory::kBurglary));
  EXPECT_TRUE(CrimeSubset::property().contains(CrimeCategory::kMotorVehicleTheft));
  EXPECT_FALSE(CrimeSubset::property().contains(CrimeCategory::kRobbery));
  EXPECT_THROW(CrimeSubset::parse("arson"), Error);
}

TEST(Taxonomy, KnownAndFallback) {
  EXPECT_EQ(map_top_category("Restaurants and Other Eating Places").id, 9);
  EXPECT_EQ(map_top_category("Postal Service").id, 4);
  EXPECT_EQ(map_top_category("Nonexistent Category", CategoryFallback::kLenient).id, 11);
  EXPECT_THROW(map_top_category("Nonexistent Category", CategoryFallback::kStrict), Error);
}

TEST(Taxonomy, EveryEntryMapsIntoRange) {
  for (const auto& e : poi_category_vocabulary()) {
    const auto c = map_top_category(e.top_category, CategoryFallback::kStrict);
    EXPECT_EQ(c.id, e.id);
    EXPECT_LE(c.id, kPoiCategoryCount);
  }
}

TEST(PoiVisits, ParseAndBlockConservation) {
  std::string s = "poi_id,top_category,lat,lon,week_start,hourly_visits\n";
  s += "p1,Postal Service,39.95,-75.16,2019-01-07," + hours_json(1) + "\n";
  s += "p2,Restaurants and Other Eating Places,39.95,-75.16,2019-01-07," + hours_json(0) + "\n";
  std::istringstream in(s);
  const auto r = parse_poi_visits(in);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].category_id, 4);
  const auto blocks = visits_to_halfday_blocks(r.records[0], r.records[0].week_start);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    EXPECT_EQ(blocks[b].visits, 12u);
    EXPECT_EQ(blocks[b].block_index, static_cast<int>(b));
  }
  for (const auto& b : visits_to_halfday_blocks(r.records[1], r.records[1].week_start)) EXPECT_EQ(b.visits, 0u);
}

TEST(PoiVisits, RandomWeekMatchesPerHourOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    PoiVisitRecord rec;
    rec.week_start = 86400 * 10;
    for (auto& h : rec.hourly_visits) h = static_cast<std::uint32_t>(rng.below(50));
    const UtcSeconds origin = rec.week_start - 2 * kSecondsPerBlock;
    std::vector<std::uint64_t> oracle(16, 0);
    for (int h = 0; h < kHoursPerWeek; ++h) {
      const UtcSeconds t = rec.week_start + h * 3600;
      oracle[static_cast<std::size_t>((t - origin) / kSecondsPerBlock)] += rec.hourly_visits[static_cast<std::size_t>(h)];
    }
    for (const auto& b : visits_to_halfday_blocks(rec, origin))
      EXPECT_EQ(b.visits, oracle[static_cast<std::size_t>(b.block_index)]);
  }
}

TEST(PoiVisits, MisalignedOriginIsRejected) {
  PoiVisitRecord rec;
  rec.week_start = 86400;
  EXPECT_THROW(visits_to_halfday_blocks(rec, 3600), Error);
}

TEST(PoiVisits, BadHourArrayIsMalformed) {
  std::string s = "poi_id,top_category,lat,lon,week_start,hourly_visits\n";
  for (int i = 0; i < 10; ++i) s += "p" + std::to_string(i) + ",Postal Service,39.95,-75.16,2019-01-07," + hours_json(2) + "\n";
  s += "bad,Postal Service,39.95,-75.16,2019-01-07,\"[1,2,3]\"\n";
  std::istringstream in(s);
  const auto r = parse_poi_visits(in);
  EXPECT_EQ(r.records.size(), 10u);
  EXPECT_EQ(r.malformed, 1u);
}

TEST(PeopleToPoi, PublishedCities) {
  EXPECT_NEAR(people_to_poi_ratio({210, 2930, 28218}), 21.8, 21.8 * 0.005);
  EXPECT_NEAR(people_to_poi_ratio({591, 4581, 95049}), 28.5, 28.5 * 0.005);
  EXPECT_DOUBLE_EQ(people_to_poi_ratio({37.0, 812.0, 37.0}), 812.0);
  EXPECT_THROW(people_to_poi_ratio({10.0, 100.0, 0.0}), Error);
}

TEST(BlockGroups, ValidMissingAndSelfIntersecting) {
  nlohmann::json props = nlohmann::json::object();
  for (auto n : kSociodemoNames) props[std::string(n)] = 10.0;
  nlohmann::json partial = props;
  partial.erase("median_household_income");
  nlohmann::json bowtie = {{"type", "Feature"},
                           {"geometry",
                            {{"type", "Polygon"},
                             {"coordinates", {{{0.0, 0.0}, {0.01, 0.01}, {0.01, 0.0}, {0.0, 0.01}, {0.0, 0.0}}}}}},
                           {"properties", props}};
  nlohmann::json doc = {{"type", "FeatureCollection"},
                        {"features", {square_feature(39.9, -75.2, 0.01, props), square_feature(39.91, -75.2, 0.01, partial), bowtie}}};
  std::istringstream in(doc.dump());
  const auto r = parse_block_groups(in, 2019);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.malformed, 1u);
  EXPECT_EQ(r.records[0].year, 2019);
  const auto income = static_cast<std::size_t>(
      std::find(kSociodemoNames.begin(), kSociodemoNames.end(), "median_household_income") - kSociodemoNames.begin());
  EXPECT_TRUE(std::isnan(r.records[1].values[income]));
  EXPECT_DOUBLE_EQ(r.records[0].values[income], 10.0);
}

TEST(BlockGroups, PercentageOutOfRangeIsSkipped) {
  nlohmann::json props = {{"pct_female", 140.0}};
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", {square_feature(39.9, -75.2, 0.01, props)}}};
  std::istringstream in(doc.dump());
  const auto r = parse_block_groups(in, 2019);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.malformed, 1u);
}
