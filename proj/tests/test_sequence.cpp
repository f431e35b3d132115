#include <gtest/gtest.h>

#include <set>

#include <gridcast/gridcast.hpp>

#include "helpers.hpp"

using namespace gridcast;
using gridcast::testing::synthetic_frames;

TEST(Windows, Counts) {
  EXPECT_EQ(sliding_windows(10, 2).size(), 8u);
  EXPECT_EQ(sliding_windows(3640, 28).size(), 3612u);
  EXPECT_EQ(sliding_windows(5, 4).size(), 1u);
  EXPECT_THROW(sliding_windows(4, 4), Error);
  const auto w = sliding_windows(10, 2);
  EXPECT_EQ(w.front().first_input, 0);
  EXPECT_EQ(w.front().target(), 2);
  EXPECT_EQ(w.back().target(), 9);
}

TEST(LookBack, DaysToBlocks) {
  EXPECT_EQ(look_back_blocks(1), 2);
  EXPECT_EQ(look_back_blocks(2), 4);
  EXPECT_EQ(look_back_blocks(7), 14);
  EXPECT_EQ(look_back_blocks(14), 28);
  EXPECT_THROW(look_back_blocks(3), Error);
}

TEST(Split, ToyAndFullScale) {
  const auto toy = chrono_split_and_trim(sliding_windows(10, 2), 0.9, 2);
  EXPECT_EQ(toy.train.size(), 5u);
  EXPECT_EQ(toy.test.size(), 1u);
  const auto big = chrono_split_and_trim(sliding_windows(3640, 28), 0.9, 28);
  EXPECT_EQ(big.train.size(), 3222u);
  EXPECT_EQ(big.test.size(), 362u);
  EXPECT_THROW(chrono_split_and_trim(sliding_windows(10, 2), 1.0, 2), Error);
  EXPECT_THROW(chrono_split_and_trim(sliding_windows(10, 2), 0.0, 2), Error);
}

TEST(Split, NoTrainingFrameIsATestTarget) {
  for (int T : {2, 4, 14, 28}) {
    const auto s = chrono_split_and_trim(sliding_windows(400, T), 0.9, T);
    const int last_train_frame = s.train.back().target();
    for (const auto& w : s.test) EXPECT_GT(w.target(), last_train_frame);
    // The trim leaves a gap of T windows, so no test input is a train target either.
    EXPECT_GT(s.test.front().first_input, last_train_frame);
    EXPECT_EQ(training_frame_limit(400, T), last_train_frame + 1);
  }
}

TEST(Subgrids, NoPositivesNoSamples) {
  const auto fs = synthetic_frames(6, 20, 20, [](int, int, int) { return false; });
  EXPECT_TRUE(sample_subgrids({0, 2}, fs, {}).empty());
}

TEST(Subgrids, ExactGridCollapsesToOneAnchor) {
  const auto fs = synthetic_frames(6, 16, 16, [](int, int r, int c) { return r == c; });
  const auto a = sample_subgrids({0, 2}, fs, {});
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], (SampleAnchor{2, 0, 0}));
}

TEST(Subgrids, DeterministicDistinctAndFiltered) {
  const auto fs = synthetic_frames(8, 20, 20, [](int b, int r, int c) { return (r * 7 + c * 3 + b) % 13 == 0; });
  SubgridOptions opt;
  opt.seed = 99;
  const auto a = sample_subgrids({1, 3}, fs, opt);
  const auto b = sample_subgrids({1, 3}, fs, opt);
  EXPECT_EQ(a, b);
  std::set<SampleAnchor> uniq(a.begin(), a.end());
  EXPECT_EQ(uniq.size(), a.size());
  EXPECT_LE(a.size(), 5u);
  for (const auto& s : a) {
    EXPECT_GE(count_positive(fs, s.target_block, s.row, s.col, 16), 2);
    EXPECT_LE(s.row, 4);
    EXPECT_LE(s.col, 4);
  }
  std::vector<SampleAnchor> all99, all100;
  SubgridOptions other = opt;
  other.seed = 100;
  for (int t = 0; t + 3 < 8; ++t) {
    for (const auto& s : sample_subgrids({t, 3}, fs, opt)) all99.push_back(s);
    for (const auto& s : sample_subgrids({t, 3}, fs, other)) all100.push_back(s);
  }
  EXPECT_NE(all99, all100);
}

TEST(Subgrids, SequenceScopeCountsInputs) {
  // Positives only in the input frames, never in the target.
  const auto fs = synthetic_frames(4, 16, 16, [](int b, int r, int c) { return b < 3 && r == 5 && c < 2; });
  SubgridOptions opt;
  EXPECT_TRUE(sample_subgrids({0, 3}, fs, opt).empty());
  opt.scope = FilterScope::kSequence;
  EXPECT_EQ(sample_subgrids({0, 3}, fs, opt).size(), 1u);
}

TEST(Caps, ExactIdentityAndError) {
  DatasetSplit s;
  for (int i = 0; i < 20; ++i) s.train.push_back({i, 0, 0});
  for (int i = 0; i < 6; ++i) s.test.push_back({100 + i, 0, 0});
  const auto c = cap_dataset(s, 12, 5);
  EXPECT_EQ(c.train.size(), 12u);
  EXPECT_EQ(c.test.size(), 5u);
  EXPECT_EQ(c.train.back().target_block, 11);
  const auto same = cap_dataset(s, 20, 6);
  EXPECT_EQ(same.train, s.train);
  EXPECT_EQ(same.test, s.test);
  EXPECT_THROW(cap_dataset(s, 21, 6), Error);
}

TEST(Caps, PublishedSizes) {
  DatasetSplit s;
  s.train.assign(16110, SampleAnchor{});
  s.test.assign(1810, SampleAnchor{});
  const auto c = cap_dataset(s, 12546, 1510);
  EXPECT_EQ(c.train.size(), 12546u);
  EXPECT_EQ(c.test.size(), 1510u);
}

TEST(BuildSplit, TrainTargetsPrecedeTestWindows) {
  const auto fs = synthetic_frames(60, 20, 20, [](int b, int r, int c) { return (r + c + b) % 5 == 0; });
  SplitConfig cfg;
  cfg.look_back = 4;
  cfg.subgrid.seed = 3;
  const auto split = build_split(fs, cfg);
  ASSERT_FALSE(split.train.empty());
  ASSERT_FALSE(split.test.empty());
  int max_train = 0;
  for (const auto& a : split.train) max_train = std::max(max_train, a.target_block);
  for (const auto& a : split.test) EXPECT_GT(a.target_block - cfg.look_back, max_train);
  EXPECT_TRUE(std::is_sorted(split.train.begin(), split.train.end(),
                             [](const auto& a, const auto& b) { return a.target_block < b.target_block; }));
}

TEST(Normalization, FitsOnlyTrainingFrames) {
  auto fs = synthetic_frames(60, 16, 16, [](int, int, int) { return false; });
  const int limit = training_frame_limit(60, 4);
  fs.frames[static_cast<std::size_t>(limit)].at(3, 3, 20) = 1e6f;  // first frame after the training range
  const auto st = fit_training_normalization(fs, 4);
  EXPECT_LT(st.max[20], 1e6);
  fs.frames[static_cast<std::size_t>(limit - 1)].at(3, 3, 20) = 1e6f;
  EXPECT_EQ(fit_training_normalization(fs, 4).max[20], 1e6);
}

TEST(Materialize, LayoutScalingAndMask) {
  auto fs = synthetic_frames(10, 18, 18, [](int b, int r, int c) { return b == 6 && r == 4 && c == 5; });
  fs.mask.set(3, 3, false);
  const auto st = fit_minmax(fs.frames, fs.mask);
  const std::vector<int> channels{0, 12, 30};
  const SampleAnchor a{6, 2, 1};
  const auto s = materialize(fs, st, a, 4, channels, 16);
  ASSERT_EQ(s.inputs.size(), 4u * 3 * 256);
  for (int t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < channels.size(); ++k)
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
          const double got = s.inputs[((static_cast<std::size_t>(t) * 3 + k) * 16 + r) * 16 + c];
          if (r + 2 == 3 && c + 1 == 3) {
            EXPECT_EQ(got, 0.0);
            continue;
          }
          const int ch = channels[k];
          const double want = minmax_scale(fs.frames[static_cast<std::size_t>(2 + t)].at(r + 2, c + 1, ch), st.min[ch], st.max[ch]);
          EXPECT_DOUBLE_EQ(got, want);
        }
  EXPECT_EQ(s.target[2 * 16 + 4], 1.0);
  EXPECT_EQ(std::accumulate(s.target.begin(), s.target.end(), 0.0), 1.0);
  EXPECT_EQ(s.mask[1 * 16 + 2], 0.0);
  EXPECT_EQ(std::accumulate(s.mask.begin(), s.mask.end(), 0.0), 255.0);
  EXPECT_THROW(materialize(fs, st, {3, 0, 0}, 4, channels, 16), Error);
  EXPECT_THROW(materialize(fs, st, {6, 3, 0}, 4, channels, 16), Error);
}

TEST(SplitIndexFile, JsonRoundTrip) {
  SplitIndex idx;
  idx.frame_file = "frames.bin";
  idx.config.look_back = 4;
  idx.config.subgrid.seed = 17;
  idx.config.train_cap = 10;
  idx.split.look_back = 4;
  idx.split.train = {{4, 1, 2}, {5, 0, 0}};
  idx.split.test = {{90, 3, 3}};
  const auto back = split_index_from_json(nlohmann::json::parse(to_json(idx).dump()));
  EXPECT_EQ(back.split.train, idx.split.train);
  EXPECT_EQ(back.split.test, idx.split.test);
  EXPECT_EQ(back.config.train_cap, idx.config.train_cap);
  EXPECT_FALSE(back.config.test_cap);
  EXPECT_EQ(back.config.subgrid.seed, 17u);
  EXPECT_EQ(to_json(back).dump(), to_json(idx).dump());
}
