#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace gridcast {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Non-trainable state saved alongside parameters (batch norm running stats).
struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

inline std::size_t parameter_count(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

/// Uniform in +-1/sqrt(fan_in).
inline Tensor uniform_init(Shape shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  /// One bias-corrected update from the gradients currently stored on the
  /// parameters; parameters without a gradient see a zero gradient.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto values = params_[k].values();
      const auto grad = params_[k].grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates probed per tensor; 0 probes all of them.
  std::size_t max_coords_per_tensor = 0;
  // Relative error uses max(|analytic|, |numeric|, abs_floor) as denominator.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  bool passed(double tol) const { return max_rel_error <= tol; }
};

/// Compares backprop gradients of a scalar function against central
/// differences. `f` must rebuild its graph from the current parameter values
/// on every call and be deterministic.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& opt = {}) {
  for (const auto& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    const auto g = p.tensor.grad();
    analytic.emplace_back(p.tensor.size(), 0.0);
    std::copy(g.begin(), g.end(), analytic.back().begin());
  }
  auto eval = [&] {
    NoGradGuard guard;
    return f().item();
  };

  GradCheckReport rep;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_tensor && coords.size() > opt.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double& x = t.values()[i];
      const double orig = x;
      x = orig + opt.step;
      const double up = eval();
      x = orig - opt.step;
      const double down = eval();
      x = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.coords_checked;
      if (rel > rep.max_rel_error || std::isnan(rel)) {
        rep.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        rep.worst_tensor = params[k].name;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: "GCPARAMS", u32 version, metadata string, u32 tensor count,
// then per tensor {name, u32 rank, u64 extents..., f64 values}.

inline constexpr std::string_view kCheckpointMagic = "GCPARAMS";
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string metadata;  // JSON text describing the model
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    fail("checkpoint has no tensor named '", name, "'");
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointFormatVersion);
  w.str(ck.metadata);
  w.u32(static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) w.u64(static_cast<std::uint64_t>(d));
    for (double v : e.values) w.f64(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  require(r.bytes(kCheckpointMagic.size()) == kCheckpointMagic, "not a checkpoint file (bad magic)");
  const auto version = r.u32();
  require(version == kCheckpointFormatVersion, "unsupported checkpoint format_version ", version);
  Checkpoint ck;
  ck.metadata = r.str();
  const auto n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    CheckpointEntry e;
    e.name = r.str();
    const auto rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(static_cast<int>(r.u64()));
    e.values.resize(numel(e.shape));
    for (double& v : e.values) v = r.f64();
    ck.entries.push_back(std::move(e));
  }
  require(r.done(), "trailing bytes after checkpoint");
  return ck;
}

inline Checkpoint make_checkpoint(std::string metadata, const std::vector<NamedTensor>& params,
                                  const std::vector<NamedBuffer>& buffers) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& p : params)
    ck.entries.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  for (const auto& b : buffers)
    ck.entries.push_back({b.name, {static_cast<int>(b.values->size())}, *b.values});
  return ck;
}

inline void load_checkpoint(const Checkpoint& ck, const std::vector<NamedTensor>& params,
                            const std::vector<NamedBuffer>& buffers) {
  for (const auto& p : params) {
    const auto& e = ck.find(p.name);
    require(e.shape == p.tensor.shape(), "checkpoint tensor '", p.name, "' has shape ", shape_string(e.shape),
            ", model expects ", shape_string(p.tensor.shape()));
    Tensor t = p.tensor;
    std::copy(e.values.begin(), e.values.end(), t.values().begin());
  }
  for (const auto& b : buffers) {
    const auto& e = ck.find(b.name);
    require(e.values.size() == b.values->size(), "checkpoint buffer '", b.name, "' has the wrong size");
    *b.values = e.values;
  }
}

}  // namespace gridcast
