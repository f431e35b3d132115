#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "features.hpp"
#include "rng.hpp"

namespace gridcast {

/// Look-back presets: days of history to half-day blocks.
inline int look_back_blocks(int days) {
  require(days == 1 || days == 2 || days == 7 || days == 14, "look-back must be 1, 2, 7, or 14 days, got ", days);
  return days * kBlocksPerDay;
}

/// T consecutive input frames followed by the target frame.
struct Window {
  int first_input = 0;
  int look_back = 0;
  int target() const { return first_input + look_back; }
  int last_input() const { return target() - 1; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Every window of T inputs plus one target over n_frames frames, in order.
inline std::vector<Window> sliding_windows(int n_frames, int look_back) {
  require(look_back >= 1, "look-back must be at least 1 block");
  require(n_frames > look_back, "need more than ", look_back, " frames for a look-back of ", look_back, ", got ",
          n_frames);
  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(n_frames - look_back));
  for (int k = 0; k + look_back < n_frames; ++k) out.push_back({k, look_back});
  return out;
}

struct WindowSplit {
  std::vector<Window> train;
  std::vector<Window> test;
  int look_back = 0;
};

/// Chronological split: the first floor(ratio * W) windows are training
/// candidates, the rest test. The last T candidates are then dropped since
/// their frames overlap the test windows.
inline WindowSplit chrono_split_and_trim(std::span<const Window> windows, double ratio, int look_back) {
  require(ratio > 0.0 && ratio < 1.0, "split ratio must lie strictly between 0 and 1, got ", ratio);
  const auto n = windows.size();
  // Guard against 0.9 * 10 evaluating to 8.999...
  const auto n_candidates = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  require(n_candidates > static_cast<std::size_t>(look_back), "training portion has ", n_candidates,
          " windows, not more than the look-back of ", look_back);
  require(n_candidates < n, "split leaves no test windows");
  WindowSplit out;
  out.look_back = look_back;
  out.train.assign(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(n_candidates - look_back));
  out.test.assign(windows.begin() + static_cast<std::ptrdiff_t>(n_candidates), windows.end());
  return out;
}

/// Number of leading frames the training windows of a split touch.
inline int training_frame_limit(int n_frames, int look_back, double ratio = 0.9) {
  const auto windows = sliding_windows(n_frames, look_back);
  const auto split = chrono_split_and_trim(windows, ratio, look_back);
  return split.train.back().target() + 1;
}

/// One sample: the subgrid at (row, col) of the window ending at target_block.
struct SampleAnchor {
  int target_block = 0;
  int row = 0;
  int col = 0;
  friend auto operator<=>(const SampleAnchor&, const SampleAnchor&) = default;
};

enum class FilterScope { kTarget, kSequence };

inline std::string_view to_string(FilterScope s) { return s == FilterScope::kTarget ? "target" : "sequence"; }

inline FilterScope parse_filter_scope(std::string_view s) {
  if (s == "target") return FilterScope::kTarget;
  if (s == "sequence") return FilterScope::kSequence;
  fail("unknown filter scope '", s, "' (expected target or sequence)");
}

struct SubgridOptions {
  int size = 16;          // M
  int per_window = 5;     // k draws
  int min_positive = 2;   // crime-positive cells required
  FilterScope scope = FilterScope::kTarget;
  std::uint64_t seed = 0;
};

inline int count_positive(const FrameSet& fs, int block, int row, int col, int size) {
  const Frame& f = fs.frames.at(static_cast<std::size_t>(block));
  int n = 0;
  for (int r = row; r < row + size; ++r)
    for (int c = col; c < col + size; ++c)
      if (fs.mask.included(r, c) && f.at(r, c, kCrimeChannel) == 1.0f) ++n;
  return n;
}

/// Draws up to k distinct top-left anchors uniformly and keeps those whose
/// subgrid holds at least min_positive positive cells. The draw depends only
/// on (seed, target block), so windows can be processed in any order.
inline std::vector<SampleAnchor> sample_subgrids(const Window& w, const FrameSet& fs, const SubgridOptions& opt) {
  require(opt.size >= 1 && opt.per_window >= 1 && opt.min_positive >= 0, "invalid subgrid options");
  require(fs.n_rows() >= opt.size && fs.n_cols() >= opt.size, "grid ", fs.n_rows(), "x", fs.n_cols(),
          " is smaller than the ", opt.size, "x", opt.size, " subgrid");
  require(w.target() < fs.n_blocks(), "window target ", w.target(), " beyond the frame set");
  const int span_r = fs.n_rows() - opt.size + 1;
  const int span_c = fs.n_cols() - opt.size + 1;
  const std::size_t n_anchors = static_cast<std::size_t>(span_r) * span_c;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(opt.per_window), n_anchors);

  Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(w.target())));
  std::vector<std::size_t> pool(n_anchors);
  for (std::size_t i = 0; i < n_anchors; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n_anchors - i)]);

  std::vector<SampleAnchor> out;
  for (std::size_t i = 0; i < k; ++i) {
    const SampleAnchor a{w.target(), static_cast<int>(pool[i] / span_c), static_cast<int>(pool[i] % span_c)};
    int positives = count_positive(fs, a.target_block, a.row, a.col, opt.size);
    if (opt.scope == FilterScope::kSequence)
      for (int b = w.first_input; b < w.target(); ++b) positives += count_positive(fs, b, a.row, a.col, opt.size);
    if (positives >= opt.min_positive) out.push_back(a);
  }
  return out;
}

struct DatasetSplit {
  std::vector<SampleAnchor> train;
  std::vector<SampleAnchor> test;
  int look_back = 0;
};

/// Keeps the chronologically first train_cap / test_cap samples.
inline DatasetSplit cap_dataset(DatasetSplit split, std::size_t train_cap, std::size_t test_cap) {
  require(train_cap <= split.train.size(), "train cap ", train_cap, " exceeds the ", split.train.size(),
          " available training samples");
  require(test_cap <= split.test.size(), "test cap ", test_cap, " exceeds the ", split.test.size(),
          " available test samples");
  split.train.resize(train_cap);
  split.test.resize(test_cap);
  return split;
}

struct SplitConfig {
  int look_back = 4;
  double ratio = 0.9;
  SubgridOptions subgrid;
  std::optional<std::size_t> train_cap;
  std::optional<std::size_t> test_cap;
};

inline DatasetSplit build_split(const FrameSet& fs, const SplitConfig& cfg) {
  const auto windows = sliding_windows(fs.n_blocks(), cfg.look_back);
  const auto ws = chrono_split_and_trim(windows, cfg.ratio, cfg.look_back);
  DatasetSplit split;
  split.look_back = cfg.look_back;
  for (const Window& w : ws.train)
    for (const auto& a : sample_subgrids(w, fs, cfg.subgrid)) split.train.push_back(a);
  for (const Window& w : ws.test)
    for (const auto& a : sample_subgrids(w, fs, cfg.subgrid)) split.test.push_back(a);
  if (cfg.train_cap || cfg.test_cap) {
    split = cap_dataset(std::move(split), cfg.train_cap.value_or(split.train.size()),
                        cfg.test_cap.value_or(split.test.size()));
  }
  return split;
}

/// Normalization fitted on the frames the training windows may touch.
inline NormalizationStats fit_training_normalization(const FrameSet& fs, int look_back, double ratio = 0.9) {
  const int limit = training_frame_limit(fs.n_blocks(), look_back, ratio);
  return fit_minmax(std::span<const Frame>(fs.frames.data(), static_cast<std::size_t>(limit)), fs.mask);
}

/// Materialized model input. Values are normalized and masked or missing
/// entries are zero; `mask` marks cells that count in the loss and metrics.
struct SequenceSample {
  SampleAnchor anchor;
  int look_back = 0;
  int channels = 0;
  int size = 0;
  std::vector<double> inputs;  // [step][channel][row][col]
  std::vector<double> target;  // [row][col], 0/1
  std::vector<double> mask;    // [row][col], 0/1
};

inline SequenceSample materialize(const FrameSet& fs, const NormalizationStats& stats, const SampleAnchor& a,
                                  int look_back, std::span<const int> channels, int size = 16) {
  require(a.target_block - look_back >= 0 && a.target_block < fs.n_blocks(), "sample window outside the frame set");
  require(a.row >= 0 && a.col >= 0 && a.row + size <= fs.n_rows() && a.col + size <= fs.n_cols(),
          "subgrid outside the grid");
  SequenceSample s;
  s.anchor = a;
  s.look_back = look_back;
  s.channels = static_cast<int>(channels.size());
  s.size = size;
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  s.inputs.assign(static_cast<std::size_t>(look_back) * channels.size() * plane, 0.0);
  s.target.assign(plane, 0.0);
  s.mask.assign(plane, 0.0);
  for (int t = 0; t < look_back; ++t) {
    const Frame& f = fs.frames[static_cast<std::size_t>(a.target_block - look_back + t)];
    for (std::size_t k = 0; k < channels.size(); ++k) {
      const int ch = channels[k];
      double* out = s.inputs.data() + (static_cast<std::size_t>(t) * channels.size() + k) * plane;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          if (!fs.mask.included(a.row + r, a.col + c)) continue;
          const double v = minmax_scale(f.at(a.row + r, a.col + c, ch), stats.min[ch], stats.max[ch]);
          out[static_cast<std::size_t>(r) * size + c] = std::isfinite(v) ? v : 0.0;
        }
      }
    }
  }
  const Frame& tf = fs.frames[static_cast<std::size_t>(a.target_block)];
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (!fs.mask.included(a.row + r, a.col + c)) continue;
      s.mask[static_cast<std::size_t>(r) * size + c] = 1.0;
      s.target[static_cast<std::size_t>(r) * size + c] = tf.at(a.row + r, a.col + c, kCrimeChannel) == 1.0f ? 1.0 : 0.0;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Split index file

inline constexpr int kSplitFormatVersion = 1;

struct SplitIndex {
  SplitConfig config;
  DatasetSplit split;
  std::string frame_file;
};

inline nlohmann::json to_json(const SplitIndex& idx) {
  auto anchors = [](const std::vector<SampleAnchor>& v) {
    auto arr = nlohmann::json::array();
    for (const auto& a : v) arr.push_back({a.target_block, a.row, a.col});
    return arr;
  };
  nlohmann::json j;
  j["format_version"] = kSplitFormatVersion;
  j["frame_file"] = idx.frame_file;
  j["look_back"] = idx.config.look_back;
  j["ratio"] = idx.config.ratio;
  j["seed"] = idx.config.subgrid.seed;
  j["subgrid_size"] = idx.config.subgrid.size;
  j["subgrids_per_window"] = idx.config.subgrid.per_window;
  j["min_positive"] = idx.config.subgrid.min_positive;
  j["filter_scope"] = std::string(to_string(idx.config.subgrid.scope));
  j["train_cap"] = idx.config.train_cap ? nlohmann::json(*idx.config.train_cap) : nlohmann::json(nullptr);
  j["test_cap"] = idx.config.test_cap ? nlohmann::json(*idx.config.test_cap) : nlohmann::json(nullptr);
  j["train"] = anchors(idx.split.train);
  j["test"] = anchors(idx.split.test);
  return j;
}

inline SplitIndex split_index_from_json(const nlohmann::json& j) {
  require(j.value("format_version", -1) == kSplitFormatVersion, "unsupported split index format_version");
  SplitIndex idx;
  idx.frame_file = j.at("frame_file").get<std::string>();
  idx.config.look_back = j.at("look_back").get<int>();
  idx.config.ratio = j.at("ratio").get<double>();
  idx.config.subgrid.seed = j.at("seed").get<std::uint64_t>();
  idx.config.subgrid.size = j.at("subgrid_size").get<int>();
  idx.config.subgrid.per_window = j.at("subgrids_per_window").get<int>();
  idx.config.subgrid.min_positive = j.at("min_positive").get<int>();
  idx.config.subgrid.scope = parse_filter_scope(j.at("filter_scope").get<std::string>());
  if (!j.at("train_cap").is_null()) idx.config.train_cap = j["train_cap"].get<std::size_t>();
  if (!j.at("test_cap").is_null()) idx.config.test_cap = j["test_cap"].get<std::size_t>();
  auto anchors = [](const nlohmann::json& arr) {
    std::vector<SampleAnchor> v;
    for (const auto& a : arr) v.push_back({a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>()});
    return v;
  };
  idx.split.look_back = idx.config.look_back;
  idx.split.train = anchors(j.at("train"));
  idx.split.test = anchors(j.at("test"));
  return idx;
}

}  // namespace gridcast
