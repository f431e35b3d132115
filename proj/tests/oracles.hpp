#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <cstdint>
#include <vector>

#include <gridcast/gridcast.hpp>

namespace gridcast::testing {

/// Confusion counts via an explicit dilation of the truth map.
inline ConfusionNN brute_confusion(const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred,
                                   int rows, int cols) {
  std::vector<std::uint8_t> near(truth.size(), 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (const CellIndex& n : chebyshev_neighbors({r, c}, rows, cols))
        if (truth[static_cast<std::size_t>(n.row) * cols + n.col]) near[static_cast<std::size_t>(r) * cols + c] = 1;
  ConfusionNN k;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && pred[i]) ++k.tp;
    if (truth[i] && !pred[i]) ++k.fn;
    if (!truth[i] && !pred[i]) ++k.tn;
    if (!truth[i] && pred[i] && near[i]) ++k.fp_nn;
    if (!truth[i] && pred[i] && !near[i]) ++k.fp;
  }
  return k;
}

struct BruteMetrics {
  double recall, precision, f1, recall_nn, precision_nn, f1_nn;
};

inline BruteMetrics brute_metrics(const ConfusionNN& k) {
  auto div = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  auto f = [](double r, double p) { return r + p == 0 ? 0.0 : 2 * r * p / (r + p); };
  const double tp = static_cast<double>(k.tp), fn = static_cast<double>(k.fn), fp = static_cast<double>(k.fp),
               nn = static_cast<double>(k.fp_nn);
  BruteMetrics m{};
  m.recall = div(tp, tp + fn);
  m.precision = div(tp, tp + fp + nn);
  m.f1 = f(m.recall, m.precision);
  m.recall_nn = div(tp + nn, tp + nn + fn);
  m.precision_nn = div(tp + nn, tp + nn + fp);
  m.f1_nn = f(m.recall_nn, m.precision_nn);
  return m;
}

}  // namespace gridcast::testing
