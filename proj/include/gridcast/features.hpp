#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "geo_grid.hpp"
#include "ingest.hpp"
#include "io.hpp"
#include "timeutil.hpp"

namespace gridcast {

// Channel layout of every frame.
inline constexpr int kCrimeChannel = 0;
inline constexpr int kFootfallFirstChannel = 1;  // categories 1..11 -> channels 1..11
inline constexpr int kDiversityChannel = 12;
inline constexpr int kSociodemoFirstChannel = 13;  // the 26 variables -> channels 13..38
inline constexpr int kChannelCount = 39;

inline const double kMaxDiversity = std::log(static_cast<double>(kPoiCategoryCount));

/// Row-major 2-D array over the grid.
template <typename T>
struct Grid2 {
  int rows = 0;
  int cols = 0;
  std::vector<T> values;

  Grid2() = default;
  Grid2(int r, int c, T fill) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

  T& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

using Layer = Grid2<double>;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Fills masked cells with NaN, the sentinel for "not part of the analysis".
inline void flag_masked(Layer& layer, const SpatialMask& mask) {
  for (int r = 0; r < layer.rows; ++r)
    for (int c = 0; c < layer.cols; ++c)
      if (!mask.included(r, c)) layer.at(r, c) = kNaN;
}

enum class FeatureSet { kC, kCM, kCS, kCMS };

inline std::string_view to_string(FeatureSet f) {
  switch (f) {
    case FeatureSet::kC: return "C";
    case FeatureSet::kCM: return "CM";
    case FeatureSet::kCS: return "CS";
    case FeatureSet::kCMS: return "CMS";
  }
  return "?";
}

inline FeatureSet parse_feature_set(std::string_view s) {
  if (s == "C") return FeatureSet::kC;
  if (s == "CM") return FeatureSet::kCM;
  if (s == "CS") return FeatureSet::kCS;
  if (s == "CMS") return FeatureSet::kCMS;
  fail("unknown feature set '", s, "' (expected C, CM, CS, or CMS)");
}

/// Frame channels used by a feature set, in frame order.
inline std::vector<int> feature_channels(FeatureSet f) {
  std::vector<int> out{kCrimeChannel};
  const bool mobility = f == FeatureSet::kCM || f == FeatureSet::kCMS;
  const bool socio = f == FeatureSet::kCS || f == FeatureSet::kCMS;
  if (mobility)
    for (int c = kFootfallFirstChannel; c <= kDiversityChannel; ++c) out.push_back(c);
  if (socio)
    for (int c = kSociodemoFirstChannel; c < kChannelCount; ++c) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Channel computations

/// 1 where at least one selected event falls in the cell during `block`.
inline Layer crime_channel(std::span<const EventRecord> events, const GridSpec& spec, const SpatialMask& mask,
                           const BlockClock& clock, int block, CrimeSubset categories) {
  require(!categories.empty(), "crime channel needs at least one crime category");
  Layer layer(spec.n_rows, spec.n_cols, 0.0);
  for (const EventRecord& e : events) {
    if (!categories.contains(e.category) || clock.block_of(e.timestamp) != block) continue;
    if (const auto cell = cell_of(e.lat, e.lon, spec)) layer.at(cell->row, cell->col) = 1.0;
  }
  flag_masked(layer, mask);
  return layer;
}

/// One POI's visits during one half-day block.
struct PoiBlockVisit {
  std::size_t poi = 0;  // dense POI index, identifies the premise for diversity
  int category_id = 1;
  double lat = 0.0;
  double lon = 0.0;
  std::uint64_t visits = 0;
};

/// Channel k-1 holds the summed visits of category-k POIs per cell.
inline std::array<Layer, kPoiCategoryCount> footfall_channels(std::span<const PoiBlockVisit> visits,
                                                              const GridSpec& spec, const SpatialMask& mask) {
  std::array<Layer, kPoiCategoryCount> out;
  for (Layer& l : out) l = Layer(spec.n_rows, spec.n_cols, 0.0);
  for (const PoiBlockVisit& v : visits) {
    require(v.category_id >= 1 && v.category_id <= kPoiCategoryCount, "POI category id out of range");
    if (const auto cell = cell_of(v.lat, v.lon, spec))
      out[static_cast<std::size_t>(v.category_id - 1)].at(cell->row, cell->col) += static_cast<double>(v.visits);
  }
  for (Layer& l : out) flag_masked(l, mask);
  return out;
}

/// Shannon entropy (nats) of the category proportions; 0 for an empty cell.
inline double shannon_diversity(std::span<const std::uint64_t> category_counts) {
  double total = 0.0;
  for (auto c : category_counts) total += static_cast<double>(c);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (auto c : category_counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(category_counts.size())));
}

/// Diversity of the POIs present in each cell during a block, counting each
/// premise once.
inline Layer diversity_channel(std::span<const PoiBlockVisit> visits, const GridSpec& spec, const SpatialMask& mask) {
  std::vector<std::array<std::uint64_t, kPoiCategoryCount>> counts(spec.cell_count());
  // (cell, poi, category), deduplicated on (cell, poi)
  std::vector<std::tuple<std::size_t, std::size_t, int>> tagged;
  tagged.reserve(visits.size());
  for (const PoiBlockVisit& v : visits) {
    if (const auto cell = cell_of(v.lat, v.lon, spec))
      tagged.emplace_back(static_cast<std::size_t>(cell->row) * spec.n_cols + cell->col, v.poi, v.category_id);
  }
  std::sort(tagged.begin(), tagged.end());
  for (std::size_t k = 0; k < tagged.size(); ++k) {
    const auto& [cell, poi, cat] = tagged[k];
    if (k > 0 && std::get<0>(tagged[k - 1]) == cell && std::get<1>(tagged[k - 1]) == poi) continue;
    ++counts[cell][static_cast<std::size_t>(cat - 1)];
  }
  Layer layer(spec.n_rows, spec.n_cols, 0.0);
  for (int r = 0; r < spec.n_rows; ++r)
    for (int c = 0; c < spec.n_cols; ++c)
      layer.at(r, c) = shannon_diversity(counts[static_cast<std::size_t>(r) * spec.n_cols + c]);
  flag_masked(layer, mask);
  return layer;
}

/// Unweighted mean of each variable over the block groups overlapping a
/// cell with positive area; NaN for cells overlapping none.
inline std::array<Layer, kSociodemoCount> sociodemo_channels(std::span<const BlockGroupRecord> groups,
                                                             const GridSpec& spec, const SpatialMask& mask) {
  std::array<Layer, kSociodemoCount> sums;
  for (Layer& l : sums) l = Layer(spec.n_rows, spec.n_cols, 0.0);
  Grid2<int> hits(spec.n_rows, spec.n_cols, 0);
  const double eps = kAreaTolerance * spec.cell_area();
  for (const BlockGroupRecord& g : groups) {
    std::vector<Polygon> parts;
    for (const GeoPolygon& p : g.geometry) parts.push_back(project(p, spec));
    std::vector<const Polygon*> ptrs;
    Box box;
    for (const Polygon& p : parts) {
      ptrs.push_back(&p);
      const Box b = bounding_box(p);
      box.expand({b.min_x, b.min_y});
      box.expand({b.max_x, b.max_y});
    }
    if (box.empty()) continue;
    const int r0 = std::max(0, static_cast<int>(std::floor(box.min_y / spec.cell_side_m)));
    const int r1 = std::min(spec.n_rows - 1, static_cast<int>(std::floor(box.max_y / spec.cell_side_m)));
    const int c0 = std::max(0, static_cast<int>(std::floor(box.min_x / spec.cell_side_m)));
    const int c1 = std::min(spec.n_cols - 1, static_cast<int>(std::floor(box.max_x / spec.cell_side_m)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (covered_area(cell_box({r, c}, spec), ptrs) <= eps) continue;
        ++hits.at(r, c);
        for (std::size_t k = 0; k < kSociodemoCount; ++k) sums[k].at(r, c) += g.values[k];
      }
    }
  }
  for (int r = 0; r < spec.n_rows; ++r) {
    for (int c = 0; c < spec.n_cols; ++c) {
      const int n = hits.at(r, c);
      for (Layer& l : sums) l.at(r, c) = n == 0 ? kNaN : l.at(r, c) / n;
    }
  }
  for (Layer& l : sums) flag_masked(l, mask);
  return sums;
}

// ---------------------------------------------------------------------------
// Frames

/// One half-day block: n_rows x n_cols x 39 values, channel fastest.
/// Masked cells hold NaN in every channel.
struct Frame {
  int block_index = 0;
  int n_rows = 0;
  int n_cols = 0;
  bool normalized = false;
  std::vector<float> values;

  float at(int r, int c, int ch) const {
    return values[(static_cast<std::size_t>(r) * n_cols + c) * kChannelCount + static_cast<std::size_t>(ch)];
  }
  float& at(int r, int c, int ch) {
    return values[(static_cast<std::size_t>(r) * n_cols + c) * kChannelCount + static_cast<std::size_t>(ch)];
  }
};

/// Number of half-day frames in [start, end) whole days.
inline int frame_count_for_span(UtcSeconds start_date, UtcSeconds end_date_exclusive) {
  require(end_date_exclusive > start_date && (end_date_exclusive - start_date) % kSecondsPerDay == 0,
          "study span must be a positive number of whole days");
  return static_cast<int>((end_date_exclusive - start_date) / kSecondsPerDay) * kBlocksPerDay;
}

/// Stacks per-block channel layers (in channel order) into frames.
inline std::vector<Frame> assemble_frames(const std::vector<std::vector<Layer>>& channels_per_block, int first_block = 0) {
  std::vector<Frame> frames;
  frames.reserve(channels_per_block.size());
  for (std::size_t b = 0; b < channels_per_block.size(); ++b) {
    const auto& layers = channels_per_block[b];
    require(layers.size() == static_cast<std::size_t>(kChannelCount), "block ", b, " has ", layers.size(),
            " channels, expected ", kChannelCount);
    Frame f;
    f.block_index = first_block + static_cast<int>(b);
    f.n_rows = layers.front().rows;
    f.n_cols = layers.front().cols;
    for (const Layer& l : layers)
      require(l.rows == f.n_rows && l.cols == f.n_cols, "block ", b, ": channel shapes disagree");
    if (!frames.empty())
      require(f.n_rows == frames.front().n_rows && f.n_cols == frames.front().n_cols, "block ", b,
              ": grid shape differs from earlier blocks");
    f.values.resize(static_cast<std::size_t>(f.n_rows) * f.n_cols * kChannelCount);
    for (int r = 0; r < f.n_rows; ++r)
      for (int c = 0; c < f.n_cols; ++c)
        for (int ch = 0; ch < kChannelCount; ++ch)
          f.at(r, c, ch) = static_cast<float>(layers[static_cast<std::size_t>(ch)].at(r, c));
    frames.push_back(std::move(f));
  }
  return frames;
}

struct NormalizationStats {
  std::array<double, kChannelCount> min{};
  std::array<double, kChannelCount> max{};
};

/// Per-channel extrema over finite values of included cells.
inline NormalizationStats fit_minmax(std::span<const Frame> frames, const SpatialMask& mask) {
  NormalizationStats s;
  s.min.fill(std::numeric_limits<double>::infinity());
  s.max.fill(-std::numeric_limits<double>::infinity());
  for (const Frame& f : frames) {
    require(!f.normalized, "min-max statistics must be fit on raw frames");
    for (int r = 0; r < f.n_rows; ++r) {
      for (int c = 0; c < f.n_cols; ++c) {
        if (!mask.included(r, c)) continue;
        for (int ch = 0; ch < kChannelCount; ++ch) {
          const double v = f.at(r, c, ch);
          if (!std::isfinite(v)) continue;
          s.min[ch] = std::min(s.min[ch], v);
          s.max[ch] = std::max(s.max[ch], v);
        }
      }
    }
  }
  for (int ch = 0; ch < kChannelCount; ++ch) {
    if (s.min[ch] > s.max[ch]) s.min[ch] = s.max[ch] = 0.0;
  }
  return s;
}

/// (v - min) / (max - min), constant channels to 0, no clamping. A frame
/// already normalized is left untouched.
inline double minmax_scale(double v, double lo, double hi) {
  if (std::isnan(v)) return v;
  if (!(hi > lo)) return 0.0;
  return (v - lo) / (hi - lo);
}

inline void apply_minmax(Frame& frame, const NormalizationStats& s) {
  if (frame.normalized) return;
  for (int r = 0; r < frame.n_rows; ++r)
    for (int c = 0; c < frame.n_cols; ++c)
      for (int ch = 0; ch < kChannelCount; ++ch)
        frame.at(r, c, ch) = static_cast<float>(minmax_scale(frame.at(r, c, ch), s.min[ch], s.max[ch]));
  frame.normalized = true;
}

inline void apply_minmax(std::span<Frame> frames, const NormalizationStats& s) {
  for (Frame& f : frames) apply_minmax(f, s);
}

inline constexpr int kNormFormatVersion = 1;

inline nlohmann::json to_json(const NormalizationStats& s) {
  nlohmann::json j;
  j["format_version"] = kNormFormatVersion;
  auto ch = nlohmann::json::array();
  for (int c = 0; c < kChannelCount; ++c) ch.push_back({{"channel", c}, {"min", s.min[c]}, {"max", s.max[c]}});
  j["channels"] = ch;
  return j;
}

inline NormalizationStats normalization_from_json(const nlohmann::json& j) {
  require(j.value("format_version", -1) == kNormFormatVersion, "unsupported normalization format_version");
  NormalizationStats s;
  const auto& ch = j.at("channels");
  require(ch.size() == static_cast<std::size_t>(kChannelCount), "normalization document needs 39 channels");
  for (int c = 0; c < kChannelCount; ++c) {
    s.min[c] = ch[static_cast<std::size_t>(c)].at("min").get<double>();
    s.max[c] = ch[static_cast<std::size_t>(c)].at("max").get<double>();
    require(s.max[c] >= s.min[c], "normalization channel ", c, " has max < min");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Frame file

/// All frames of a study span on one grid.
struct FrameSet {
  GridSpec spec;
  SpatialMask mask;
  UtcSeconds block_origin = 0;
  std::vector<Frame> frames;

  int n_blocks() const { return static_cast<int>(frames.size()); }
  int n_rows() const { return spec.n_rows; }
  int n_cols() const { return spec.n_cols; }
};

inline constexpr std::string_view kFrameMagic = "GCFRAMES";
inline constexpr std::uint32_t kFrameFormatVersion = 1;

/// Layout (little-endian):
///   magic "GCFRAMES" | u32 format_version | u32 n_blocks | u32 n_rows |
///   u32 n_cols | u32 n_channels | i64 block_origin_utc |
///   mask bitmap ceil(n_rows*n_cols/8) bytes, row-major, LSB first |
///   f32 values [block][row][col][channel]
inline std::string encode_frames(const FrameSet& fs) {
  io::ByteWriter w;
  w.bytes(kFrameMagic);
  w.u32(kFrameFormatVersion);
  w.u32(static_cast<std::uint32_t>(fs.frames.size()));
  w.u32(static_cast<std::uint32_t>(fs.spec.n_rows));
  w.u32(static_cast<std::uint32_t>(fs.spec.n_cols));
  w.u32(kChannelCount);
  w.i64(fs.block_origin);
  const std::size_t cells = fs.spec.cell_count();
  std::vector<std::uint8_t> bitmap((cells + 7) / 8, 0);
  const auto flags = fs.mask.flags();
  for (std::size_t i = 0; i < cells; ++i)
    if (flags[i]) bitmap[i / 8] = static_cast<std::uint8_t>(bitmap[i / 8] | (1u << (i % 8)));
  for (auto b : bitmap) w.u8(b);
  for (const Frame& f : fs.frames) {
    require(!f.normalized, "frame files store raw values");
    for (float v : f.values) w.f32(v);
  }
  return w.take();
}

/// Decodes a frame file; `spec` supplies the grid geometry that the binary
/// header does not carry and must agree with its dimensions.
inline FrameSet decode_frames(std::string_view bytes, const GridSpec& spec) {
  io::ByteReader r(bytes);
  require(r.bytes(kFrameMagic.size()) == kFrameMagic, "not a frame file (bad magic)");
  const auto version = r.u32();
  require(version == kFrameFormatVersion, "unsupported frame file format_version ", version);
  FrameSet fs;
  fs.spec = spec;
  const auto n_blocks = r.u32();
  const auto n_rows = r.u32();
  const auto n_cols = r.u32();
  const auto n_channels = r.u32();
  require(static_cast<int>(n_rows) == spec.n_rows && static_cast<int>(n_cols) == spec.n_cols,
          "frame file grid does not match the grid document");
  require(n_channels == kChannelCount, "frame file has ", n_channels, " channels, expected ", kChannelCount);
  fs.block_origin = r.i64();
  const std::size_t cells = spec.cell_count();
  const auto bitmap = r.bytes((cells + 7) / 8);
  fs.mask = SpatialMask(spec.n_rows, spec.n_cols, false);
  for (std::size_t i = 0; i < cells; ++i) {
    const bool inc = (static_cast<unsigned char>(bitmap[i / 8]) >> (i % 8)) & 1u;
    fs.mask.set(static_cast<int>(i / n_cols), static_cast<int>(i % n_cols), inc);
  }
  const std::size_t per_frame = cells * kChannelCount;
  require(r.remaining() == static_cast<std::size_t>(n_blocks) * per_frame * 4, "frame file size does not match header");
  fs.frames.resize(n_blocks);
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    Frame& f = fs.frames[b];
    f.block_index = static_cast<int>(b);
    f.n_rows = spec.n_rows;
    f.n_cols = spec.n_cols;
    f.values.resize(per_frame);
    for (float& v : f.values) v = r.f32();
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Rasterization

struct RasterConfig {
  UtcSeconds start_date = 0;            // first study day, 00:00 UTC of that date
  UtcSeconds end_date = 0;              // exclusive
  int utc_offset_hours = 0;             // blocks start at local 00:00 and 12:00
  CrimeSubset crimes = CrimeSubset::all();
};

struct RasterSummary {
  int frames = 0;
  std::size_t included_cells = 0;
  std::size_t positive_cells = 0;  // (included cell, block) pairs with crime
  std::size_t events_in_span = 0;
  std::size_t events_outside_grid = 0;
  double positive_rate() const {
    const double denom = static_cast<double>(included_cells) * frames;
    return denom > 0 ? static_cast<double>(positive_cells) / denom : 0.0;
  }
};

/// Picks, per calendar year, the latest block-group vintage not after that
/// year (or the earliest vintage when all are later).
inline int vintage_for_year(const std::vector<int>& vintages, int year) {
  require(!vintages.empty(), "no block-group vintages");
  int best = vintages.front();
  for (int v : vintages)
    if (v <= year) best = v;
  return best;
}

/// Builds every frame of the span. Channel computations are per block;
/// frames come out in block order.
inline FrameSet rasterize(const GridSpec& spec, const SpatialMask& mask, std::span<const EventRecord> events,
                          std::span<const PoiVisitRecord> visits, std::span<const BlockGroupRecord> block_groups,
                          const RasterConfig& cfg, RasterSummary* summary = nullptr) {
  const BlockClock clock = BlockClock::for_span(cfg.start_date, cfg.end_date, cfg.utc_offset_hours);
  const int n_blocks = clock.n_blocks;

  std::vector<std::vector<EventRecord>> events_by_block(static_cast<std::size_t>(n_blocks));
  RasterSummary sum;
  for (const EventRecord& e : events) {
    const int b = clock.block_of(e.timestamp);
    if (b < 0) continue;
    ++sum.events_in_span;
    if (!cell_of(e.lat, e.lon, spec)) ++sum.events_outside_grid;
    events_by_block[static_cast<std::size_t>(b)].push_back(e);
  }

  std::map<std::string, std::size_t> poi_ids;
  std::vector<std::vector<PoiBlockVisit>> visits_by_block(static_cast<std::size_t>(n_blocks));
  for (const PoiVisitRecord& rec : visits) {
    const std::size_t poi = poi_ids.emplace(rec.poi_id, poi_ids.size()).first->second;
    const UtcSeconds delta = rec.week_start - clock.origin;
    require(delta % kSecondsPerBlock == 0, "POI ", rec.poi_id, ": week_start ", format_iso8601(rec.week_start),
            " is not aligned to the half-day blocks");
    // Weeks starting before the span are expanded against an earlier origin.
    const UtcSeconds origin = delta >= 0 ? clock.origin : rec.week_start;
    const int shift = static_cast<int>((origin - clock.origin) / kSecondsPerBlock);
    for (const BlockVisits& bv : visits_to_halfday_blocks(rec, origin)) {
      const int b = bv.block_index + shift;
      if (b < 0 || b >= n_blocks) continue;
      visits_by_block[static_cast<std::size_t>(b)].push_back({poi, rec.category_id, rec.lat, rec.lon, bv.visits});
    }
  }

  std::map<int, std::vector<BlockGroupRecord>> by_vintage;
  for (const BlockGroupRecord& g : block_groups) by_vintage[g.year].push_back(g);
  require(!by_vintage.empty(), "no block groups supplied");
  std::vector<int> vintages;
  for (const auto& [year, _] : by_vintage) vintages.push_back(year);
  std::map<int, std::array<Layer, kSociodemoCount>> socio;
  for (const auto& [year, groups] : by_vintage) socio[year] = sociodemo_channels(groups, spec, mask);

  FrameSet fs;
  fs.spec = spec;
  fs.mask = mask;
  fs.block_origin = clock.origin;
  fs.frames.reserve(static_cast<std::size_t>(n_blocks));
  for (int b = 0; b < n_blocks; ++b) {
    std::vector<std::vector<Layer>> one(1);
    auto& layers = one.front();
    layers.reserve(kChannelCount);
    layers.push_back(crime_channel(events_by_block[static_cast<std::size_t>(b)], spec, mask, clock, b, cfg.crimes));
    const auto& bv = visits_by_block[static_cast<std::size_t>(b)];
    for (Layer& l : footfall_channels(bv, spec, mask)) layers.push_back(std::move(l));
    layers.push_back(diversity_channel(bv, spec, mask));
    // Local calendar year of the block start.
    const int year = year_of(clock.block_start(b) + static_cast<UtcSeconds>(cfg.utc_offset_hours) * 3600);
    for (const Layer& l : socio.at(vintage_for_year(vintages, year))) layers.push_back(l);
    auto frames = assemble_frames(one, b);
    fs.frames.push_back(std::move(frames.front()));
    for (int r = 0; r < spec.n_rows; ++r)
      for (int c = 0; c < spec.n_cols; ++c)
        if (mask.included(r, c) && layers.front().at(r, c) == 1.0) ++sum.positive_cells;
  }
  sum.frames = n_blocks;
  sum.included_cells = mask.count();
  if (summary) *summary = sum;
  return fs;
}

}  // namespace gridcast
