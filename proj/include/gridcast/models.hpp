#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "sequence.hpp"
#include "tensor.hpp"

namespace gridcast {

enum class PeepholeShape { kPerChannel, kFullState };

inline std::string_view to_string(PeepholeShape p) { return p == PeepholeShape::kPerChannel ? "channel" : "full"; }

inline PeepholeShape parse_peephole_shape(std::string_view s) {
  if (s == "channel") return PeepholeShape::kPerChannel;
  if (s == "full") return PeepholeShape::kFullState;
  fail("unknown peephole shape '", s, "' (expected channel or full)");
}

struct CellState {
  Tensor h;
  Tensor c;
};

/// One recurrent layer with peephole gates. With kernel k > 1 the input and
/// state transforms are same-padded convolutions (ConvLSTM); with k = 1 on a
/// 1x1 spatial extent it is an ordinary fully connected LSTM layer.
///
/// Gates are stored stacked in the order forget, input, candidate, output:
/// w_x is [4*hidden, in, k, k], w_h is [4*hidden, hidden, k, k], b is [4*hidden].
class RecurrentBlock {
 public:
  RecurrentBlock() = default;
  RecurrentBlock(std::string name, int in_channels, int hidden, int kernel, int height, int width,
                 PeepholeShape peephole, Rng& rng)
      : name_(std::move(name)), in_(in_channels), hidden_(hidden), height_(height), width_(width) {
    require(kernel % 2 == 1, "recurrent block kernel must be odd");
    w_x = uniform_init({4 * hidden, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
    w_h = uniform_init({4 * hidden, hidden, kernel, kernel}, hidden * kernel * kernel, rng);
    b = Tensor::zeros({4 * hidden}, true);
    const Shape ps = peephole == PeepholeShape::kPerChannel ? Shape{hidden} : Shape{hidden, height, width};
    w_cf = Tensor::zeros(ps, true);
    w_ci = Tensor::zeros(ps, true);
    w_co = Tensor::zeros(ps, true);
  }

  int hidden() const { return hidden_; }

  /// Gate pre-activations contributed by the inputs, for any number of steps.
  Tensor input_gates(const Tensor& x) const { return conv2d(x, w_x, b); }

  /// Advances one step given input gate pre-activations for that step.
  CellState step(const Tensor& gx, const CellState& prev) const {
    Tensor gates = prev.h ? add(gx, conv2d(prev.h, w_h)) : gx;
    const int H = hidden_;
    Tensor f_pre = slice_channels(gates, 0, H);
    Tensor i_pre = slice_channels(gates, H, 2 * H);
    if (prev.c) {
      f_pre = add(f_pre, hadamard_broadcast(prev.c, w_cf));
      i_pre = add(i_pre, hadamard_broadcast(prev.c, w_ci));
    }
    const Tensor f = sigmoid(f_pre);
    const Tensor i = sigmoid(i_pre);
    const Tensor g = tanh(slice_channels(gates, 2 * H, 3 * H));
    const Tensor c = prev.c ? add(mul(f, prev.c), mul(i, g)) : mul(i, g);
    const Tensor o = sigmoid(add(slice_channels(gates, 3 * H, 4 * H), hadamard_broadcast(c, w_co)));
    return {mul(o, tanh(c)), c};
  }

  /// x: [in, T*B, H, W] with time-major batch axis. Returns the hidden
  /// states of every step, [hidden, T*B, H, W]. States start at zero.
  Tensor forward(const Tensor& x, int steps) const {
    require(x.dim(0) == in_, name_, ": expected ", in_, " input channels, got ", x.dim(0));
    require(steps >= 1 && x.dim(1) % steps == 0, name_, ": batch axis ", x.dim(1), " not divisible by ", steps,
            " steps");
    const int B = x.dim(1) / steps;
    const Tensor gx = input_gates(x);
    CellState state;
    std::vector<Tensor> hs;
    for (int t = 0; t < steps; ++t) {
      state = step(steps == 1 ? gx : slice_batch(gx, t * B, (t + 1) * B), state);
      hs.push_back(state.h);
    }
    return steps == 1 ? hs[0] : concat_batch(hs);
  }

  void collect(std::vector<NamedTensor>& out) const {
    out.push_back({name_ + ".w_x", w_x});
    out.push_back({name_ + ".w_h", w_h});
    out.push_back({name_ + ".b", b});
    out.push_back({name_ + ".w_cf", w_cf});
    out.push_back({name_ + ".w_ci", w_ci});
    out.push_back({name_ + ".w_co", w_co});
  }

  Tensor w_x, w_h, b, w_cf, w_ci, w_co;

 private:
  std::string name_;
  int in_ = 0;
  int hidden_ = 0;
  int height_ = 0;
  int width_ = 0;
};

/// Model input for one mini-batch. `inputs` uses the layout the model
/// expects; targets and mask are [B, H*W] in row-major cell order.
struct Batch {
  Tensor inputs;
  int steps = 0;
  int size = 0;
  std::vector<double> targets;
  std::vector<double> mask;
};

enum class ModelKind { kConvLstm, kLstm, kLogReg, kForest };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kConvLstm: return "convlstm";
    case ModelKind::kLstm: return "lstm";
    case ModelKind::kLogReg: return "logreg";
    case ModelKind::kForest: return "rf";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "convlstm") return ModelKind::kConvLstm;
  if (s == "lstm") return ModelKind::kLstm;
  if (s == "logreg" || s == "lr") return ModelKind::kLogReg;
  if (s == "rf" || s == "forest") return ModelKind::kForest;
  fail("unknown model '", s, "' (expected convlstm, lstm, logreg, or rf)");
}

/// Interface shared by the two recurrent networks.
class NeuralModel {
 public:
  virtual ~NeuralModel() = default;
  virtual ModelKind kind() const = 0;
  virtual Batch make_batch(std::span<const SequenceSample* const> samples) const = 0;
  /// Probabilities shaped [B, H*W] (or [1, B, H, W], same element order).
  virtual Tensor forward(const Batch& batch, bool training, Rng& rng) = 0;
  virtual std::vector<NamedTensor> parameters() const = 0;
  virtual std::vector<NamedBuffer> buffers() { return {}; }
  virtual nlohmann::json config_json() const = 0;
  /// Called after a checkpoint restores buffers.
  virtual void mark_loaded() {}
};

inline void fill_targets(std::span<const SequenceSample* const> samples, Batch& batch) {
  const std::size_t plane = static_cast<std::size_t>(samples[0]->size) * samples[0]->size;
  batch.targets.resize(samples.size() * plane);
  batch.mask.resize(samples.size() * plane);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    std::copy(samples[b]->target.begin(), samples[b]->target.end(), batch.targets.begin() + b * plane);
    std::copy(samples[b]->mask.begin(), samples[b]->mask.end(), batch.mask.begin() + b * plane);
  }
}

inline void check_batch(std::span<const SequenceSample* const> samples, int channels, int size) {
  require(!samples.empty(), "empty batch");
  for (const SequenceSample* s : samples)
    require(s->channels == channels && s->size == size && s->look_back == samples[0]->look_back,
            "sample shape (", s->look_back, " steps, ", s->channels, " channels, ", s->size,
            " cells) does not match the model (", channels, " channels, ", size, " cells)");
}

// ---------------------------------------------------------------------------
// ConvLSTM

struct ConvLstmConfig {
  int in_channels = kChannelCount;
  int hidden = 28;
  int layers = 3;
  int kernel = 3;
  int size = 16;
  double dropout = 0.8;
  PeepholeShape peephole = PeepholeShape::kPerChannel;
};

/// Stacked ConvLSTM blocks, each followed by ReLU and batch norm over the
/// whole hidden-state sequence; a 3x3 head convolution on the last step's
/// hidden state, dropout on the logits, then sigmoid.
class ConvLstmNet final : public NeuralModel {
 public:
  ConvLstmNet(const ConvLstmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    require(cfg.layers >= 1 && cfg.hidden >= 1 && cfg.in_channels >= 1, "invalid ConvLSTM configuration");
    Rng rng(derive_seed(seed, 0x1417));
    int in = cfg.in_channels;
    for (int l = 0; l < cfg.layers; ++l) {
      blocks_.emplace_back("convlstm" + std::to_string(l + 1), in, cfg.hidden, cfg.kernel, cfg.size, cfg.size,
                           cfg.peephole, rng);
      norms_.emplace_back(cfg.hidden);
      in = cfg.hidden;
    }
    head_w_ = uniform_init({1, cfg.hidden, cfg.kernel, cfg.kernel}, cfg.hidden * cfg.kernel * cfg.kernel, rng);
    head_b_ = Tensor::zeros({1}, true);
  }

  ModelKind kind() const override { return ModelKind::kConvLstm; }
  const ConvLstmConfig& config() const { return cfg_; }
  std::vector<RecurrentBlock>& blocks() { return blocks_; }

  /// Input layout [C, T*B, H, W], time-major along the batch axis.
  Batch make_batch(std::span<const SequenceSample* const> samples) const override {
    check_batch(samples, cfg_.in_channels, cfg_.size);
    const int T = samples[0]->look_back;
    const int C = cfg_.in_channels;
    const auto B = samples.size();
    const std::size_t plane = static_cast<std::size_t>(cfg_.size) * cfg_.size;
    std::vector<double> x(static_cast<std::size_t>(C) * T * B * plane);
    for (std::size_t b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
          const double* src = samples[b]->inputs.data() + (static_cast<std::size_t>(t) * C + c) * plane;
          double* dst = x.data() + ((static_cast<std::size_t>(c) * T + t) * B + b) * plane;
          std::copy_n(src, plane, dst);
        }
    Batch batch;
    batch.steps = T;
    batch.size = static_cast<int>(B);
    batch.inputs = Tensor({C, T * static_cast<int>(B), cfg_.size, cfg_.size}, std::move(x));
    fill_targets(samples, batch);
    return batch;
  }

  Tensor forward(const Batch& batch, bool training, Rng& rng) override {
    Tensor h = batch.inputs;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      h = blocks_[l].forward(h, batch.steps);
      h = norms_[l].forward(relu(h), training);
    }
    const int B = batch.size;
    const Tensor last = batch.steps == 1 ? h : slice_batch(h, (batch.steps - 1) * B, batch.steps * B);
    Tensor logits = conv2d(last, head_w_, head_b_);
    logits = dropout(logits, cfg_.dropout, training, rng);
    return sigmoid(logits);
  }

  std::vector<NamedTensor> parameters() const override {
    std::vector<NamedTensor> out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      blocks_[l].collect(out);
      const std::string n = "bn" + std::to_string(l + 1);
      out.push_back({n + ".gamma", norms_[l].gamma});
      out.push_back({n + ".beta", norms_[l].beta});
    }
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_});
    return out;
  }

  std::vector<NamedBuffer> buffers() override {
    std::vector<NamedBuffer> out;
    for (std::size_t l = 0; l < norms_.size(); ++l) {
      const std::string n = "bn" + std::to_string(l + 1);
      out.push_back({n + ".running_mean", &norms_[l].running_mean});
      out.push_back({n + ".running_var", &norms_[l].running_var});
    }
    return out;
  }

  void mark_loaded() override {
    for (auto& n : norms_) n.updated = true;
  }

  nlohmann::json config_json() const override {
    return {{"model", "convlstm"},     {"in_channels", cfg_.in_channels}, {"hidden", cfg_.hidden},
            {"layers", cfg_.layers},   {"kernel", cfg_.kernel},           {"size", cfg_.size},
            {"dropout", cfg_.dropout}, {"peephole", std::string(to_string(cfg_.peephole))}};
  }

 private:
  ConvLstmConfig cfg_;
  std::vector<RecurrentBlock> blocks_;
  std::vector<BatchNorm> norms_;
  Tensor head_w_;
  Tensor head_b_;
};

inline ConvLstmConfig convlstm_config_from_json(const nlohmann::json& j) {
  ConvLstmConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.size = j.at("size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.peephole = parse_peephole_shape(j.at("peephole").get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// Fully connected LSTM baseline

struct LstmConfig {
  int in_channels = kChannelCount;
  int hidden = 28;
  int layers = 3;
  int size = 16;
};

/// Each frame flattened to size*size*channels features; stacked LSTM layers
/// with ReLU between them; affine head to size*size logits, then sigmoid.
class LstmNet final : public NeuralModel {
 public:
  LstmNet(const LstmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    require(cfg.layers >= 1 && cfg.hidden >= 1 && cfg.in_channels >= 1, "invalid LSTM configuration");
    Rng rng(derive_seed(seed, 0x157));
    int in = features();
    for (int l = 0; l < cfg.layers; ++l) {
      blocks_.emplace_back("lstm" + std::to_string(l + 1), in, cfg.hidden, 1, 1, 1, PeepholeShape::kPerChannel,
                           rng);
      in = cfg.hidden;
    }
    head_w_ = uniform_init({outputs(), cfg.hidden, 1, 1}, cfg.hidden, rng);
    head_b_ = Tensor::zeros({outputs()}, true);
  }

  ModelKind kind() const override { return ModelKind::kLstm; }
  int features() const { return cfg_.in_channels * cfg_.size * cfg_.size; }
  int outputs() const { return cfg_.size * cfg_.size; }
  std::vector<RecurrentBlock>& blocks() { return blocks_; }

  /// Input layout [features, T*B, 1, 1]; feature index is channel * size^2 + cell.
  Batch make_batch(std::span<const SequenceSample* const> samples) const override {
    check_batch(samples, cfg_.in_channels, cfg_.size);
    const int T = samples[0]->look_back;
    const auto D = static_cast<std::size_t>(features());
    const auto B = samples.size();
    const std::size_t TB = static_cast<std::size_t>(T) * B;
    std::vector<double> x(D * TB);
    for (std::size_t b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) {
        const double* src = samples[b]->inputs.data() + static_cast<std::size_t>(t) * D;
        const std::size_t col = static_cast<std::size_t>(t) * B + b;
        for (std::size_t d = 0; d < D; ++d) x[d * TB + col] = src[d];
      }
    Batch batch;
    batch.steps = T;
    batch.size = static_cast<int>(B);
    batch.inputs = Tensor({static_cast<int>(D), static_cast<int>(TB), 1, 1}, std::move(x));
    fill_targets(samples, batch);
    return batch;
  }

  Tensor forward(const Batch& batch, bool, Rng&) override {
    Tensor h = batch.inputs;
    for (auto& block : blocks_) h = relu(block.forward(h, batch.steps));
    const int B = batch.size;
    const Tensor last = batch.steps == 1 ? h : slice_batch(h, (batch.steps - 1) * B, batch.steps * B);
    const Tensor logits = conv2d(last, head_w_, head_b_);  // [cells, B, 1, 1]
    return sigmoid(transpose2d(reshape(logits, {outputs(), B})));
  }

  std::vector<NamedTensor> parameters() const override {
    std::vector<NamedTensor> out;
    for (const auto& block : blocks_) block.collect(out);
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_});
    return out;
  }

  nlohmann::json config_json() const override {
    return {{"model", "lstm"},
            {"in_channels", cfg_.in_channels},
            {"hidden", cfg_.hidden},
            {"layers", cfg_.layers},
            {"size", cfg_.size}};
  }

 private:
  LstmConfig cfg_;
  std::vector<RecurrentBlock> blocks_;
  Tensor head_w_;
  Tensor head_b_;
};

inline LstmConfig lstm_config_from_json(const nlohmann::json& j) {
  LstmConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.size = j.at("size").get<int>();
  return c;
}

/// 1 where p >= threshold.
inline std::vector<std::uint8_t> predict_binary(std::span<const double> probs, double threshold = 0.5) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace gridcast
