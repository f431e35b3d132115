#pragma once

// Per-cell baselines: each included cell of each sample becomes one row
// whose features are that cell's own T x C history.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "sequence.hpp"

namespace gridcast {

struct CellDataset {
  int features = 0;
  std::vector<double> x;  // row-major [rows, features]
  std::vector<double> y;
  std::size_t rows() const { return y.size(); }
  const double* row(std::size_t i) const { return x.data() + i * static_cast<std::size_t>(features); }
};

/// Feature t*C + c holds channel c at step t.
inline void cell_features(const SequenceSample& s, int cell, double* out) {
  const std::size_t plane = static_cast<std::size_t>(s.size) * s.size;
  for (int t = 0; t < s.look_back; ++t)
    for (int c = 0; c < s.channels; ++c)
      out[t * s.channels + c] = s.inputs[(static_cast<std::size_t>(t) * s.channels + c) * plane + cell];
}

inline void append_cells(CellDataset& ds, const SequenceSample& s) {
  if (ds.features == 0) ds.features = s.look_back * s.channels;
  require(s.look_back * s.channels == ds.features, "samples disagree on feature count");
  const int plane = s.size * s.size;
  for (int cell = 0; cell < plane; ++cell) {
    if (s.mask[static_cast<std::size_t>(cell)] == 0.0) continue;
    const std::size_t at = ds.x.size();
    ds.x.resize(at + static_cast<std::size_t>(ds.features));
    cell_features(s, cell, ds.x.data() + at);
    ds.y.push_back(s.target[static_cast<std::size_t>(cell)]);
  }
}

inline CellDataset cell_dataset(std::span<const SequenceSample> samples) {
  CellDataset ds;
  for (const auto& s : samples) append_cells(ds, s);
  return ds;
}

/// Balanced class weights n / (2 n_class).
inline std::pair<double, double> balanced_class_weights(std::span<const double> y) {
  const auto n = static_cast<double>(y.size());
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1.0));
  const double neg = n - pos;
  require(pos > 0 && neg > 0, "training data contains a single class");
  return {n / (2.0 * neg), n / (2.0 * pos)};
}

/// Applies a per-row scorer to every cell of a sample; masked cells get 0.
template <typename Score>
std::vector<double> predict_cells(const SequenceSample& s, Score score) {
  const int plane = s.size * s.size;
  std::vector<double> out(static_cast<std::size_t>(plane), 0.0);
  std::vector<double> f(static_cast<std::size_t>(s.look_back * s.channels));
  for (int cell = 0; cell < plane; ++cell) {
    if (s.mask[static_cast<std::size_t>(cell)] == 0.0) continue;
    cell_features(s, cell, f.data());
    out[static_cast<std::size_t>(cell)] = score(f.data());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

struct LogRegConfig {
  int max_iter = 400;
  double tol = 1e-6;   // gradient-norm stop
  double l2 = 1.0;     // inverse regularization strength C; 0 disables the penalty
};

struct LogisticRegression {
  std::vector<double> weights;
  double intercept = 0.0;
  int iterations = 0;

  double predict_proba(const double* f) const {
    double z = intercept;
    for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * f[j];
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
};

/// Gradient descent with Armijo backtracking on the class-weighted mean
/// cross-entropy plus an L2 penalty ||w||^2 / (2 C n) on the weights.
inline LogisticRegression fit_logistic_regression(const CellDataset& ds, const LogRegConfig& cfg = {}) {
  require(ds.rows() > 0, "logistic regression needs training rows");
  const auto [w_neg, w_pos] = balanced_class_weights(ds.y);
  const auto n = static_cast<Eigen::Index>(ds.rows());
  const auto d = static_cast<Eigen::Index>(ds.features);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // Owned, aligned copy: products on a borrowed buffer could round differently
  // depending on its address.
  const RowMat X = Eigen::Map<const RowMat>(ds.x.data(), n, d);
  Eigen::VectorXd y(n), sw(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = ds.y[static_cast<std::size_t>(i)];
    sw[i] = (y[i] == 1.0 ? w_pos : w_neg) / static_cast<double>(n);
  }
  const double lambda = cfg.l2 > 0 ? 1.0 / (cfg.l2 * static_cast<double>(n)) : 0.0;

  auto objective = [&](const Eigen::VectorXd& w, double b, Eigen::VectorXd* z_out) {
    Eigen::VectorXd z = (X * w).array() + b;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + e^z) - y z, computed stably
      const double zi = z[i];
      const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
      loss += sw[i] * (softplus - y[i] * zi);
    }
    if (z_out) *z_out = std::move(z);
    return loss + 0.5 * lambda * w.squaredNorm();
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  double step = 1.0;
  Eigen::VectorXd z;
  double f = objective(w, b, &z);
  LogisticRegression model;
  for (int it = 0; it < cfg.max_iter; ++it) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
      r[i] = sw[i] * (p - y[i]);
    }
    const Eigen::VectorXd gw = X.transpose() * r + lambda * w;
    const double gb = r.sum();
    const double gnorm2 = gw.squaredNorm() + gb * gb;
    model.iterations = it;
    if (std::sqrt(gnorm2) < cfg.tol) break;
    step *= 2.0;
    while (true) {
      const Eigen::VectorXd w_new = w - step * gw;
      const double b_new = b - step * gb;
      Eigen::VectorXd z_new;
      const double f_new = objective(w_new, b_new, &z_new);
      if (f_new <= f - 0.5 * step * gnorm2 || step < 1e-12) {
        w = w_new;
        b = b_new;
        f = f_new;
        z = std::move(z_new);
        break;
      }
      step *= 0.5;
    }
    model.iterations = it + 1;
  }
  model.weights.assign(w.data(), w.data() + d);
  model.intercept = b;
  return model;
}

inline nlohmann::json to_json(const LogisticRegression& m) {
  return {{"model", "logreg"}, {"weights", m.weights}, {"intercept", m.intercept}, {"iterations", m.iterations}};
}

inline LogisticRegression logreg_from_json(const nlohmann::json& j) {
  LogisticRegression m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  m.iterations = j.value("iterations", 0);
  return m;
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
  int trees = 100;
  // Bootstrap draws per tree; 0 means one per training row.
  std::size_t max_samples = 0;
  // Candidate features per split; 0 means floor(sqrt(d)).
  int max_features = 0;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight_neg = 0.0;
  double weight_pos = 0.0;
  double probability() const {
    const double t = weight_neg + weight_pos;
    return t > 0 ? weight_pos / t : 0.0;
  }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  double predict_proba(const double* f) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const TreeNode& n = nodes[static_cast<std::size_t>(k)];
      k = f[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(k)].probability();
  }
};

/// Weighted binary entropy in bits.
inline double binary_entropy(double w_neg, double w_pos) {
  const double t = w_neg + w_pos;
  if (t <= 0) return 0.0;
  double h = 0.0;
  for (double w : {w_neg, w_pos})
    if (w > 0) h -= (w / t) * std::log2(w / t);
  return h;
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Best entropy split over the given features. Ties keep the earlier
/// feature in `features` order, then the lower threshold.
inline SplitChoice best_split(const CellDataset& ds, std::span<const std::size_t> rows, std::span<const double> row_weight,
                              std::span<const int> features) {
  double tot_neg = 0.0, tot_pos = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) (ds.y[rows[k]] == 1.0 ? tot_pos : tot_neg) += row_weight[k];
  const double total = tot_neg + tot_pos;
  const double parent = binary_entropy(tot_neg, tot_pos);
  SplitChoice best;
  std::vector<std::size_t> order(rows.size());
  for (int f : features) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto value = [&](std::size_t k) { return ds.row(rows[k])[f]; };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = value(a), vb = value(b);
      return va < vb || (va == vb && a < b);
    });
    double l_neg = 0.0, l_pos = 0.0;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t k = order[i];
      (ds.y[rows[k]] == 1.0 ? l_pos : l_neg) += row_weight[k];
      const double v = value(k), v_next = value(order[i + 1]);
      if (v == v_next) continue;
      const double lw = l_neg + l_pos;
      const double rw = total - lw;
      const double child = (lw * binary_entropy(l_neg, l_pos) + rw * binary_entropy(tot_neg - l_neg, tot_pos - l_pos)) / total;
      const double gain = parent - child;
      if (gain > best.gain + 1e-12) best = {f, v + (v_next - v) / 2.0, gain};
    }
  }
  return best;
}

/// Grows a tree on (row, weight) pairs until nodes are pure, hold at most two
/// rows, or admit no improving split among the sampled features.
inline DecisionTree grow_tree(const CellDataset& ds, std::vector<std::size_t> rows, std::vector<double> weights,
                              int max_features, Rng& rng) {
  DecisionTree tree;
  struct Pending {
    int node;
    std::vector<std::size_t> rows;
    std::vector<double> weights;
  };
  std::vector<Pending> stack;
  tree.nodes.push_back({});
  stack.push_back({0, std::move(rows), std::move(weights)});
  std::vector<int> all(static_cast<std::size_t>(ds.features));
  std::iota(all.begin(), all.end(), 0);
  while (!stack.empty()) {
    Pending p = std::move(stack.back());
    stack.pop_back();
    double w_neg = 0.0, w_pos = 0.0;
    for (std::size_t k = 0; k < p.rows.size(); ++k) (ds.y[p.rows[k]] == 1.0 ? w_pos : w_neg) += p.weights[k];
    TreeNode& node = tree.nodes[static_cast<std::size_t>(p.node)];
    node.weight_neg = w_neg;
    node.weight_pos = w_pos;
    if (w_neg == 0.0 || w_pos == 0.0 || p.rows.size() <= 2) continue;

    for (int i = 0; i < max_features; ++i)
      std::swap(all[static_cast<std::size_t>(i)], all[i + rng.below(all.size() - static_cast<std::size_t>(i))]);
    std::vector<int> candidates(all.begin(), all.begin() + max_features);
    std::sort(candidates.begin(), candidates.end());
    const SplitChoice s = best_split(ds, p.rows, p.weights, candidates);
    if (s.feature < 0) continue;

    Pending left{static_cast<int>(tree.nodes.size()), {}, {}};
    Pending right{static_cast<int>(tree.nodes.size()) + 1, {}, {}};
    for (std::size_t k = 0; k < p.rows.size(); ++k) {
      Pending& side = ds.row(p.rows[k])[s.feature] <= s.threshold ? left : right;
      side.rows.push_back(p.rows[k]);
      side.weights.push_back(p.weights[k]);
    }
    TreeNode& parent = tree.nodes[static_cast<std::size_t>(p.node)];
    parent.feature = s.feature;
    parent.threshold = s.threshold;
    parent.left = left.node;
    parent.right = right.node;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    stack.push_back(std::move(right));
    stack.push_back(std::move(left));
  }
  return tree;
}

struct RandomForest {
  std::vector<DecisionTree> trees;

  double predict_proba(const double* f) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict_proba(f);
    return trees.empty() ? 0.0 : s / static_cast<double>(trees.size());
  }
};

/// Bootstrap forest with balanced class weights; tree t draws from a
/// generator seeded with seed + t.
inline RandomForest fit_random_forest(const CellDataset& ds, const ForestConfig& cfg, std::uint64_t seed) {
  require(ds.rows() > 0 && cfg.trees >= 1, "random forest needs training rows and at least one tree");
  const auto [w_neg, w_pos] = balanced_class_weights(ds.y);
  const int max_features =
      cfg.max_features > 0 ? std::min(cfg.max_features, ds.features)
                           : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(ds.features)))));
  const std::size_t draws = cfg.max_samples > 0 ? cfg.max_samples : ds.rows();
  RandomForest forest;
  for (int t = 0; t < cfg.trees; ++t) {
    Rng rng(seed + static_cast<std::uint64_t>(t));
    std::vector<std::size_t> counts(ds.rows(), 0);
    for (std::size_t i = 0; i < draws; ++i) ++counts[rng.below(ds.rows())];
    std::vector<std::size_t> rows;
    std::vector<double> weights;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (!counts[i]) continue;
      rows.push_back(i);
      weights.push_back(static_cast<double>(counts[i]) * (ds.y[i] == 1.0 ? w_pos : w_neg));
    }
    forest.trees.push_back(grow_tree(ds, std::move(rows), std::move(weights), max_features, rng));
  }
  return forest;
}

inline nlohmann::json to_json(const RandomForest& f) {
  auto trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({{"feature", n.feature},
                       {"threshold", n.threshold},
                       {"children", {n.left, n.right}},
                       {"class_weights", {n.weight_neg, n.weight_pos}}});
    trees.push_back(std::move(nodes));
  }
  return {{"model", "rf"}, {"trees", std::move(trees)}};
}

inline RandomForest forest_from_json(const nlohmann::json& j) {
  RandomForest f;
  for (const auto& nodes : j.at("trees")) {
    DecisionTree t;
    for (const auto& n : nodes) {
      TreeNode node;
      node.feature = n.at("feature").get<int>();
      node.threshold = n.at("threshold").get<double>();
      node.left = n.at("children").at(0).get<int>();
      node.right = n.at("children").at(1).get<int>();
      node.weight_neg = n.at("class_weights").at(0).get<double>();
      node.weight_pos = n.at("class_weights").at(1).get<double>();
      t.nodes.push_back(node);
    }
    f.trees.push_back(std::move(t));
  }
  return f;
}

}  // namespace gridcast
