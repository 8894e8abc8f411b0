#pragma once

// Gradient-boosted regression trees on the logistic loss (second-order
// boosting with exact greedy split search).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

struct GbdtParams {
  int max_trees = 200;
  int depth = 3;
  double learning_rate = 0.1;
  double l2 = 1.0;                // leaf weight penalty
  double min_child_weight = 1.0;  // minimum hessian sum per child
  int folds = 5;                  // CV folds used to pick the tree count
  std::uint64_t seed = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const std::vector<double>& x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

class GBDTModel {
 public:
  GBDTModel() = default;
  GBDTModel(std::vector<std::string> names, double base, double lr)
      : feature_names_(std::move(names)), base_score_(base), learning_rate_(lr), gain_(feature_names_.size(), 0.0) {}

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  double base_score() const { return base_score_; }
  double learning_rate() const { return learning_rate_; }
  const std::vector<double>& total_gain() const { return gain_; }

  double margin(const std::vector<double>& x, std::size_t n_trees = std::numeric_limits<std::size_t>::max()) const {
    if (x.size() != feature_names_.size()) throw ValidationError("GBDT: feature count mismatch");
    double m = base_score_;
    const std::size_t n = std::min(n_trees, trees_.size());
    for (std::size_t t = 0; t < n; ++t) m += learning_rate_ * trees_[t].predict(x);
    return m;
  }

  double predict_proba(const std::vector<double>& x) const {
    const double m = margin(x);
    return m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
  }

  /// Total split gain per feature, normalized to sum 1 (all zeros if the
  /// model never split).
  std::vector<double> importances() const {
    const double total = std::accumulate(gain_.begin(), gain_.end(), 0.0);
    std::vector<double> out(gain_.size(), 0.0);
    if (total > 0)
      for (std::size_t i = 0; i < gain_.size(); ++i) out[i] = gain_[i] / total;
    return out;
  }

  void add_tree(RegressionTree t) { trees_.push_back(std::move(t)); }
  void add_gain(std::size_t feature, double g) { gain_[feature] += g; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["base_score"] = base_score_;
    j["learning_rate"] = learning_rate_;
    j["feature_names"] = feature_names_;
    j["gain"] = gain_;
    auto trees = nlohmann::ordered_json::array();
    for (const auto& t : trees_) {
      auto nodes = nlohmann::ordered_json::array();
      for (const auto& n : t.nodes)
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                         {"value", n.value}});
      trees.push_back(nodes);
    }
    j["trees"] = trees;
    return j;
  }

  static GBDTModel from_json(const nlohmann::json& j) {
    GBDTModel m(j.at("feature_names").get<std::vector<std::string>>(), j.at("base_score").get<double>(),
                j.at("learning_rate").get<double>());
    m.gain_ = j.at("gain").get<std::vector<double>>();
    for (const auto& t : j.at("trees")) {
      RegressionTree tree;
      for (const auto& n : t)
        tree.nodes.push_back(TreeNode{n.at("feature").get<int>(), n.at("threshold").get<double>(),
                                      n.at("left").get<int>(), n.at("right").get<int>(), n.at("value").get<double>()});
      m.trees_.push_back(std::move(tree));
    }
    return m;
  }

 private:
  std::vector<std::string> feature_names_;
  double base_score_ = 0.0;
  double learning_rate_ = 0.1;
  std::vector<double> gain_;
  std::vector<RegressionTree> trees_;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& columns, const std::vector<double>& g,
              const std::vector<double>& h, const GbdtParams& p, GBDTModel& model)
      : cols_(columns), g_(g), h_(h), p_(p), model_(model) {}

  RegressionTree build(const std::vector<std::size_t>& rows) {
    RegressionTree tree;
    grow(tree, rows, 0);
    return tree;
  }

 private:
  int grow(RegressionTree& tree, const std::vector<std::size_t>& rows, int depth) {
    double G = 0, H = 0;
    for (auto r : rows) {
      G += g_[r];
      H += h_[r];
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, -G / (H + p_.l2)});
    if (depth >= p_.depth || rows.size() < 2) return id;

    const double parent = G * G / (H + p_.l2);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> sorted = rows;
    for (std::size_t f = 0; f < cols_.size(); ++f) {
      const auto& x = cols_[f];
      sorted = rows;
      std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
      double GL = 0, HL = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        GL += g_[sorted[i]];
        HL += h_[sorted[i]];
        if (!(x[sorted[i]] < x[sorted[i + 1]])) continue;
        const double GR = G - GL, HR = H - HL;
        if (HL < p_.min_child_weight || HR < p_.min_child_weight) continue;
        const double gain = 0.5 * (GL * GL / (HL + p_.l2) + GR * GR / (HR + p_.l2) - parent);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = x[sorted[i]];
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (cols_[static_cast<std::size_t>(best_feature)][r] <= best_threshold ? left : right).push_back(r);
    model_.add_gain(static_cast<std::size_t>(best_feature), best_gain);
    const int l = grow(tree, left, depth + 1);
    const int r = grow(tree, right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const std::vector<std::vector<double>>& cols_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const GbdtParams& p_;
  GBDTModel& model_;
};

inline void check_training_set(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                               std::size_t n_features) {
  if (X.size() < 2 || X.size() != y.size()) throw ValidationError("gbdt_train: need >= 2 rows with labels");
  for (const auto& row : X)
    if (row.size() != n_features) throw ValidationError("gbdt_train: ragged feature rows");
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size()))
    throw ValidationError("gbdt_train: training labels contain a single class");
}

}  // namespace detail

/// Trains exactly params.max_trees trees. Splits are "x <= observed value",
/// so the model depends on each feature only through its ordering.
inline GBDTModel gbdt_train(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                            const GbdtParams& params, std::vector<std::string> feature_names = {}) {
  const std::size_t nf = X.empty() ? 0 : X.front().size();
  if (feature_names.empty())
    for (std::size_t f = 0; f < nf; ++f) feature_names.push_back("x" + std::to_string(f));
  if (feature_names.size() != nf) throw ValidationError("gbdt_train: feature name count mismatch");
  detail::check_training_set(X, y, nf);
  if (params.depth < 1 || params.max_trees < 1 || !(params.learning_rate > 0))
    throw ValidationError("gbdt_train: depth, max_trees and learning_rate must be positive");

  const std::size_t n = X.size();
  std::vector<std::vector<double>> cols(nf, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < nf; ++f) cols[f][i] = X[i][f];

  const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double prior = pos / static_cast<double>(n);
  GBDTModel model(std::move(feature_names), std::log(prior / (1.0 - prior)), params.learning_rate);

  std::vector<double> margin(n, model.base_score()), g(n), h(n);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  for (int t = 0; t < params.max_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double m = margin[i];
      const double p = m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
      g[i] = p - static_cast<double>(y[i]);
      h[i] = std::max(p * (1.0 - p), 1e-16);
    }
    detail::TreeBuilder builder(cols, g, h, params, model);
    auto tree = builder.build(rows);
    for (std::size_t i = 0; i < n; ++i) margin[i] += params.learning_rate * tree.predict(X[i]);
    model.add_tree(std::move(tree));
  }
  return model;
}

/// Stratified, seeded k-fold assignment.
inline std::vector<int> stratified_folds(const std::vector<int>& y, int k, std::uint64_t seed) {
  std::vector<int> fold(y.size(), 0);
  Rng rng(seed);
  for (int label = 0; label <= 1; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == label) idx.push_back(i);
    shuffle(idx, rng);
    for (std::size_t r = 0; r < idx.size(); ++r) fold[idx[r]] = static_cast<int>(r % static_cast<std::size_t>(k));
  }
  return fold;
}

/// Picks the tree count minimizing mean held-out log loss over stratified
/// folds. Folds whose training part holds a single class are skipped; with no
/// usable fold the maximum is returned.
inline int select_tree_count(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                             const GbdtParams& params) {
  const std::size_t nf = X.empty() ? 0 : X.front().size();
  detail::check_training_set(X, y, nf);
  if (params.folds < 2) return params.max_trees;
  const auto fold = stratified_folds(y, params.folds, params.seed);
  std::vector<double> loss(static_cast<std::size_t>(params.max_trees), 0.0);
  std::size_t evaluated = 0;
  for (int f = 0; f < params.folds; ++f) {
    std::vector<std::vector<double>> Xtr, Xte;
    std::vector<int> ytr, yte;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (fold[i] == f) {
        Xte.push_back(X[i]);
        yte.push_back(y[i]);
      } else {
        Xtr.push_back(X[i]);
        ytr.push_back(y[i]);
      }
    }
    const auto pos = std::count(ytr.begin(), ytr.end(), 1);
    if (Xte.empty() || Xtr.size() < 2 || pos == 0 || pos == static_cast<std::ptrdiff_t>(ytr.size())) continue;
    const auto model = gbdt_train(Xtr, ytr, params);
    for (std::size_t i = 0; i < Xte.size(); ++i) {
      double m = model.base_score();
      for (std::size_t t = 0; t < model.trees().size(); ++t) {
        m += model.learning_rate() * model.trees()[t].predict(Xte[i]);
        const double p = m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
        const double py = yte[i] == 1 ? p : 1.0 - p;
        loss[t] -= std::log(std::max(py, 1e-15));
      }
    }
    evaluated += Xte.size();
  }
  if (evaluated == 0) return params.max_trees;
  return static_cast<int>(std::min_element(loss.begin(), loss.end()) - loss.begin()) + 1;
}

}  // namespace domsel
