#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace gridcast {

/// Cell outcomes; predicted-1/truth-0 cells split into fp_nn (some
/// Chebyshev-1 neighbour is a true 1) and fp (none is).
struct ConfusionNN {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fp_nn = 0;

  std::uint64_t total() const { return tp + tn + fn + fp + fp_nn; }
  ConfusionNN& operator+=(const ConfusionNN& o) {
    tp += o.tp;
    tn += o.tn;
    fn += o.fn;
    fp += o.fp;
    fp_nn += o.fp_nn;
    return *this;
  }
  friend bool operator==(const ConfusionNN&, const ConfusionNN&) = default;
};

/// truth, pred and mask are row-major rows x cols; masked cells (mask 0) are
/// neither counted nor consulted as neighbours. An empty mask includes all.
inline ConfusionNN classify_cells(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred,
                                  std::span<const std::uint8_t> mask, int rows, int cols) {
  const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  require(truth.size() == n && pred.size() == n && (mask.empty() || mask.size() == n), "classify_cells: expected ",
          rows, "x", cols, " matrices");
  auto live = [&](int r, int c) { return mask.empty() || mask[static_cast<std::size_t>(r) * cols + c] != 0; };
  ConfusionNN out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!live(r, c)) continue;
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      const bool o = truth[i] != 0;
      const bool p = pred[i] != 0;
      if (o && p) {
        ++out.tp;
      } else if (o) {
        ++out.fn;
      } else if (!p) {
        ++out.tn;
      } else {
        bool near = false;
        for (int dr = -1; dr <= 1 && !near; ++dr)
          for (int dc = -1; dc <= 1 && !near; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if ((dr || dc) && rr >= 0 && rr < rows && cc >= 0 && cc < cols && live(rr, cc) &&
                truth[static_cast<std::size_t>(rr) * cols + cc] != 0)
              near = true;
          }
        ++(near ? out.fp_nn : out.fp);
      }
    }
  }
  return out;
}

inline constexpr std::array<std::string_view, 6> kMetricNames = {"recall",    "precision",    "f1",
                                                                 "recall_nn", "precision_nn", "f1_nn"};

struct Metrics {
  double recall = 0, precision = 0, f1 = 0;
  double recall_nn = 0, precision_nn = 0, f1_nn = 0;
  // Set when the corresponding ratio had a zero denominator and reports 0.
  bool recall_degenerate = false, precision_degenerate = false;
  bool recall_nn_degenerate = false, precision_nn_degenerate = false;

  std::array<double, 6> values() const { return {recall, precision, f1, recall_nn, precision_nn, f1_nn}; }
  std::map<std::string, double> as_map() const {
    std::map<std::string, double> m;
    const auto v = values();
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(kMetricNames[i], v[i]);
    return m;
  }
};

namespace detail {
inline double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  degenerate = den == 0;
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}
inline double harmonic(double a, double b) { return a + b > 0 ? 2.0 * a * b / (a + b) : 0.0; }
}  // namespace detail

/// Standard metrics treat fp_nn as ordinary false positives; the NN variants
/// credit them as hits.
inline Metrics metrics(const ConfusionNN& c) {
  Metrics m;
  m.recall = detail::ratio(c.tp, c.tp + c.fn, m.recall_degenerate);
  m.precision = detail::ratio(c.tp, c.tp + c.fp + c.fp_nn, m.precision_degenerate);
  m.recall_nn = detail::ratio(c.tp + c.fp_nn, c.tp + c.fp_nn + c.fn, m.recall_nn_degenerate);
  m.precision_nn = detail::ratio(c.tp + c.fp_nn, c.tp + c.fp_nn + c.fp, m.precision_nn_degenerate);
  m.f1 = detail::harmonic(m.recall, m.precision);
  m.f1_nn = detail::harmonic(m.recall_nn, m.precision_nn);
  return m;
}

/// Probability maps with their truth and evaluation masks, one per sample.
struct PredictionSet {
  int rows = 16;
  int cols = 16;
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<std::uint8_t>> truth;
  std::vector<std::vector<std::uint8_t>> mask;
};

/// Confusion summed over every sample at threshold tau (p >= tau is 1).
inline ConfusionNN confusion_at(const PredictionSet& ps, double tau) {
  require(ps.probs.size() == ps.truth.size() && ps.truth.size() == ps.mask.size(), "prediction set size mismatch");
  ConfusionNN total;
  std::vector<std::uint8_t> pred;
  for (std::size_t s = 0; s < ps.probs.size(); ++s) {
    pred.resize(ps.probs[s].size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = ps.probs[s][i] >= tau ? 1 : 0;
    total += classify_cells(ps.truth[s], pred, ps.mask[s], ps.rows, ps.cols);
  }
  return total;
}

struct SweepRow {
  double threshold = 0.5;
  ConfusionNN confusion;
  Metrics metrics;
};

inline std::vector<double> default_threshold_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

inline std::vector<SweepRow> sweep_thresholds(const PredictionSet& ps, std::span<const double> taus) {
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    require(tau > 0.0 && tau < 1.0, "threshold ", tau, " outside (0, 1)");
    const auto c = confusion_at(ps, tau);
    rows.push_back({tau, c, metrics(c)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregation over seeds and feature sets

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

/// Mean and population standard deviation per metric.
inline std::map<std::string, MeanStd> aggregate_seeds(std::span<const std::map<std::string, double>> reports) {
  require(reports.size() >= 2, "aggregation needs at least 2 reports, got ", reports.size());
  std::map<std::string, MeanStd> out;
  for (const auto& [name, _] : reports[0]) {
    double sum = 0.0;
    for (const auto& r : reports) {
      require(r.size() == reports[0].size() && r.contains(name), "reports disagree on their metric sets");
      sum += r.at(name);
    }
    const double mean = sum / static_cast<double>(reports.size());
    double ss = 0.0;
    for (const auto& r : reports) ss += (r.at(name) - mean) * (r.at(name) - mean);
    out[name] = {mean, std::sqrt(ss / static_cast<double>(reports.size()))};
  }
  return out;
}

/// Signed percentage-point differences (a - b) * 100.
inline std::map<std::string, double> ablation_diff(const std::map<std::string, double>& a,
                                                   const std::map<std::string, double>& b) {
  std::map<std::string, double> out;
  for (const auto& [name, va] : a) {
    require(b.contains(name), "ablation_diff: metric '", name, "' missing from the second report");
    out[name] = (va - b.at(name)) * 100.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct SeedReport {
  std::uint64_t seed = 0;
  ConfusionNN confusion;
  Metrics metrics;
};

struct EvalReport {
  std::string model;
  std::string features;
  int look_back = 0;
  double threshold = 0.5;
  std::vector<SeedReport> seeds;

  std::vector<std::map<std::string, double>> seed_maps() const {
    std::vector<std::map<std::string, double>> v;
    for (const auto& s : seeds) v.push_back(s.metrics.as_map());
    return v;
  }
  /// Mean over seeds; the std is 0 with a single seed.
  std::map<std::string, MeanStd> summary() const {
    require(!seeds.empty(), "report has no seeds");
    const auto maps = seed_maps();
    if (maps.size() == 1) {
      std::map<std::string, MeanStd> out;
      for (const auto& [k, v] : maps[0]) out[k] = {v, 0.0};
      return out;
    }
    return aggregate_seeds(maps);
  }
};

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

/// Long form: metric,seed,value, followed by mean and std rows.
inline std::string report_csv(const EvalReport& r) {
  std::string out = "metric,seed,value\n";
  for (std::string_view name : kMetricNames)
    for (const auto& s : r.seeds)
      out += std::string(name) + "," + std::to_string(s.seed) + "," + format_double(s.metrics.as_map().at(std::string(name))) + "\n";
  const auto sum = r.summary();
  for (std::string_view name : kMetricNames) {
    out += std::string(name) + ",mean," + format_double(sum.at(std::string(name)).mean) + "\n";
    out += std::string(name) + ",std," + format_double(sum.at(std::string(name)).std) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const ConfusionNN& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fn", c.fn}, {"fp", c.fp}, {"fp_nn", c.fp_nn}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["model"] = r.model;
  j["features"] = r.features;
  j["look_back"] = r.look_back;
  j["threshold"] = r.threshold;
  auto seeds = nlohmann::json::array();
  for (const auto& s : r.seeds) {
    nlohmann::json e{{"seed", s.seed}, {"confusion", to_json(s.confusion)}};
    for (const auto& [k, v] : s.metrics.as_map()) e["metrics"][k] = v;
    e["degenerate"] = {{"recall", s.metrics.recall_degenerate},
                       {"precision", s.metrics.precision_degenerate},
                       {"recall_nn", s.metrics.recall_nn_degenerate},
                       {"precision_nn", s.metrics.precision_nn_degenerate}};
    seeds.push_back(std::move(e));
  }
  j["seeds"] = std::move(seeds);
  for (const auto& [k, v] : r.summary()) j["summary"][k] = {{"mean", v.mean}, {"std", v.std}};
  return j;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "threshold";
  for (auto n : kMetricNames) out += "," + std::string(n);
  out += ",tp,tn,fn,fp,fp_nn\n";
  for (const auto& r : rows) {
    out += format_double(r.threshold);
    for (double v : r.metrics.values()) out += "," + format_double(v);
    const auto& c = r.confusion;
    out += "," + std::to_string(c.tp) + "," + std::to_string(c.tn) + "," + std::to_string(c.fn) + "," +
           std::to_string(c.fp) + "," + std::to_string(c.fp_nn) + "\n";
  }
  return out;
}

/// One row per feature set: mean and std of each metric, and the signed
/// percentage-point difference against the reference set.
inline std::string ablation_csv(const std::vector<EvalReport>& reports, std::string_view reference = "CMS") {
  const EvalReport* ref = nullptr;
  for (const auto& r : reports)
    if (r.features == reference) ref = &r;
  require(ref != nullptr, "ablation table needs a ", reference, " report");
  std::map<std::string, double> ref_mean;
  for (const auto& [k, v] : ref->summary()) ref_mean[k] = v.mean;

  std::string out = "features";
  for (auto n : kMetricNames) out += "," + std::string(n) + "_mean," + std::string(n) + "_std";
  for (auto n : kMetricNames) out += "," + std::string(n) + "_diff_vs_" + std::string(reference);
  out += "\n";
  for (const auto& r : reports) {
    const auto sum = r.summary();
    std::map<std::string, double> mean;
    for (const auto& [k, v] : sum) mean[k] = v.mean;
    const auto diff = ablation_diff(mean, ref_mean);
    out += r.features;
    for (auto n : kMetricNames)
      out += "," + format_double(sum.at(std::string(n)).mean) + "," + format_double(sum.at(std::string(n)).std);
    for (auto n : kMetricNames) out += "," + format_double(diff.at(std::string(n)));
    out += "\n";
  }
  return out;
}

}  // namespace gridcast
