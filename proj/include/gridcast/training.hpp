#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "error.hpp"
#include "features.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "sequence.hpp"

namespace gridcast {

/// Anchors plus everything needed to materialize them on demand.
struct SequenceDataset {
  const FrameSet* frames = nullptr;
  NormalizationStats stats;
  int look_back = 0;
  int size = 16;
  std::vector<int> channels;
  std::vector<SampleAnchor> anchors;

  std::size_t size_samples() const { return anchors.size(); }
  SequenceSample get(std::size_t i) const {
    return materialize(*frames, stats, anchors.at(i), look_back, channels, size);
  }
};

struct TrainConfig {
  double lr = 1e-5;
  int batch = 55;
  int epochs = 200;
  std::uint64_t seed = 0;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam on masked BCE. Each epoch visits the samples in an order
/// drawn from the seed; the dropout stream is seeded separately.
inline TrainResult train_neural(NeuralModel& model, const SequenceDataset& data, const TrainConfig& cfg) {
  require(data.size_samples() > 0, "training split is empty");
  require(cfg.batch >= 1 && cfg.epochs >= 0 && cfg.lr >= 0.0, "invalid training configuration");
  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  Adam opt(params, {.lr = cfg.lr});
  Rng order_rng(derive_seed(cfg.seed, 0x0de5));
  Rng dropout_rng(derive_seed(cfg.seed, 0xd20));

  TrainResult result;
  std::vector<std::size_t> order(data.size_samples());
  std::vector<SequenceSample> samples;
  std::vector<const SequenceSample*> ptrs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      samples.clear();
      ptrs.clear();
      for (std::size_t k = start; k < end; ++k) samples.push_back(data.get(order[k]));
      for (const auto& s : samples) ptrs.push_back(&s);
      const Batch batch = model.make_batch(ptrs);
      opt.zero_grad();
      const Tensor probs = model.forward(batch, true, dropout_rng);
      const Tensor loss = bce_loss(probs, batch.targets, batch.mask);
      if (!std::isfinite(loss.item()))
        throw TrainingDiverged("training diverged (non-finite loss) at epoch " + std::to_string(epoch + 1) +
                               " with seed " + std::to_string(cfg.seed));
      loss.backward();
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

inline std::string loss_trace_csv(const TrainResult& r) {
  std::string out = "epoch,train_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
    out += std::to_string(e + 1) + "," + format_double(r.epoch_loss[e]) + "\n";
  return out;
}

inline std::uint8_t to_bit(double v) { return v != 0.0 ? 1 : 0; }

inline void append_truth(PredictionSet& ps, const SequenceSample& s) {
  std::vector<std::uint8_t> t(s.target.size()), m(s.mask.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = to_bit(s.target[i]);
    m[i] = to_bit(s.mask[i]);
  }
  ps.truth.push_back(std::move(t));
  ps.mask.push_back(std::move(m));
}

/// Inference in evaluation mode; masked cells get probability 0.
inline PredictionSet predict_neural(NeuralModel& model, const SequenceDataset& data, int batch_size = 55) {
  NoGradGuard no_grad;
  PredictionSet ps;
  ps.rows = ps.cols = data.size;
  Rng unused(0);
  std::vector<SequenceSample> samples;
  std::vector<const SequenceSample*> ptrs;
  const std::size_t plane = static_cast<std::size_t>(data.size) * data.size;
  for (std::size_t start = 0; start < data.size_samples(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size_samples(), start + static_cast<std::size_t>(batch_size));
    samples.clear();
    ptrs.clear();
    for (std::size_t k = start; k < end; ++k) samples.push_back(data.get(k));
    for (const auto& s : samples) ptrs.push_back(&s);
    const Batch batch = model.make_batch(ptrs);
    const Tensor probs = model.forward(batch, false, unused);
    for (std::size_t b = 0; b < samples.size(); ++b) {
      std::vector<double> p(probs.data() + b * plane, probs.data() + (b + 1) * plane);
      for (std::size_t i = 0; i < plane; ++i)
        if (samples[b].mask[i] == 0.0) p[i] = 0.0;
      ps.probs.push_back(std::move(p));
      append_truth(ps, samples[b]);
    }
  }
  return ps;
}

inline CellDataset cell_dataset(const SequenceDataset& data) {
  CellDataset ds;
  for (std::size_t i = 0; i < data.size_samples(); ++i) {
    append_cells(ds, data.get(i));
  }
  return ds;
}

template <typename Model>
PredictionSet predict_cells_all(const Model& model, const SequenceDataset& data) {
  PredictionSet ps;
  ps.rows = ps.cols = data.size;
  for (std::size_t i = 0; i < data.size_samples(); ++i) {
    const SequenceSample s = data.get(i);
    ps.probs.push_back(predict_cells(s, [&](const double* f) { return model.predict_proba(f); }));
    append_truth(ps, s);
  }
  return ps;
}

}  // namespace gridcast
