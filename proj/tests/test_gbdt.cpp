#include <gtest/gtest.h>

#include <random>

#include "domsel/gbdt.hpp"

using namespace domsel;

namespace {

struct Data {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
};

/// Label depends on feature `informative` only; the rest is noise.
Data noisy_world(int n, int nf, int informative, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Data d;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(static_cast<std::size_t>(nf));
    for (auto& v : x) v = nd(rng);
    const double p = 1.0 / (1.0 + std::exp(-3.0 * x[static_cast<std::size_t>(informative)]));
    d.X.push_back(x);
    d.y.push_back(u(rng) < p ? 1 : 0);
  }
  return d;
}

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

}  // namespace

TEST(Gbdt, OneDimensionalSeparable) {
  Data d;
  for (int i = -10; i <= 10; ++i) {
    if (i == 0) continue;
    d.X.push_back({i * 0.1});
    d.y.push_back(i > 0 ? 1 : 0);
  }
  GbdtParams p;
  p.depth = 1;
  p.max_trees = 10;
  p.min_child_weight = 0.0;
  const auto m = gbdt_train(d.X, d.y, p);
  ASSERT_EQ(m.trees().size(), 10u);
  for (std::size_t i = 0; i < d.X.size(); ++i) EXPECT_EQ(m.predict_proba(d.X[i]) >= 0.5 ? 1 : 0, d.y[i]);
  EXPECT_EQ(m.trees()[0].nodes[0].threshold, -0.1);
}

TEST(Gbdt, FirstTreeMatchesBruteForceSecondOrderSplit) {
  const auto d = noisy_world(60, 3, 1, 7);
  GbdtParams p;
  p.depth = 1;
  p.max_trees = 1;
  p.min_child_weight = 0.0;
  p.l2 = 1.0;
  const auto m = gbdt_train(d.X, d.y, p);

  double pos = 0;
  for (int v : d.y) pos += v;
  const double base = std::log(pos / (d.y.size() - pos));
  EXPECT_NEAR(m.base_score(), base, 1e-12);
  const double q = sigmoid(base);
  // At the base score every row has gradient q - y and hessian q (1 - q).
  double best = -1, best_thr = 0, best_left = 0, best_right = 0;
  int best_f = -1;
  for (int f = 0; f < 3; ++f)
    for (const auto& row : d.X) {
      const double thr = row[static_cast<std::size_t>(f)];
      double GL = 0, HL = 0, GR = 0, HR = 0;
      for (std::size_t i = 0; i < d.X.size(); ++i) {
        const double g = q - d.y[i], h = q * (1 - q);
        if (d.X[i][static_cast<std::size_t>(f)] <= thr) GL += g, HL += h;
        else GR += g, HR += h;
      }
      if (HR == 0) continue;
      const double G = GL + GR, H = HL + HR;
      const double gain = 0.5 * (GL * GL / (HL + 1) + GR * GR / (HR + 1) - G * G / (H + 1));
      if (gain > best) best = gain, best_f = f, best_thr = thr, best_left = -GL / (HL + 1), best_right = -GR / (HR + 1);
    }
  const auto& root = m.trees()[0].nodes[0];
  EXPECT_EQ(root.feature, best_f);
  EXPECT_EQ(root.threshold, best_thr);
  EXPECT_NEAR(m.trees()[0].nodes[static_cast<std::size_t>(root.left)].value, best_left, 1e-12);
  EXPECT_NEAR(m.trees()[0].nodes[static_cast<std::size_t>(root.right)].value, best_right, 1e-12);
  EXPECT_NEAR(m.total_gain()[static_cast<std::size_t>(best_f)], best, 1e-12);
  std::vector<double> x = d.X[0];
  const double leaf = x[static_cast<std::size_t>(best_f)] <= best_thr ? best_left : best_right;
  EXPECT_NEAR(m.predict_proba(x), sigmoid(base + 0.1 * leaf), 1e-12);
}

TEST(Gbdt, ImportancesNormalizedAndConstantColumnIgnored) {
  auto d = noisy_world(200, 4, 2, 11);
  for (auto& row : d.X) row[0] = 3.5;
  const auto m = gbdt_train(d.X, d.y, GbdtParams{});
  const auto imp = m.importances();
  double s = 0;
  for (double v : imp) s += v;
  EXPECT_NEAR(s, 1.0, 1e-9);
  EXPECT_EQ(imp[0], 0.0);
  EXPECT_GT(imp[2], imp[1]);
  EXPECT_GT(imp[2], imp[3]);
}

TEST(Gbdt, InvariantUnderMonotoneFeatureTransform) {
  const auto d = noisy_world(150, 4, 3, 13);
  auto cubed = d;
  for (auto& row : cubed.X) row[3] = row[3] * row[3] * row[3];
  GbdtParams p;
  p.max_trees = 40;
  const auto a = gbdt_train(d.X, d.y, p), b = gbdt_train(cubed.X, cubed.y, p);
  EXPECT_EQ(select_tree_count(d.X, d.y, p), select_tree_count(cubed.X, cubed.y, p));
  const auto test = noisy_world(50, 4, 3, 14);
  for (auto row : test.X) {
    const double pa = a.predict_proba(row);
    row[3] = row[3] * row[3] * row[3];
    EXPECT_EQ(pa, b.predict_proba(row));
  }
}

TEST(Gbdt, DeterministicAndJsonRoundTrip) {
  const auto d = noisy_world(100, 3, 0, 15);
  GbdtParams p;
  p.max_trees = 25;
  const auto a = gbdt_train(d.X, d.y, p, {"u", "v", "w"});
  const auto b = gbdt_train(d.X, d.y, p, {"u", "v", "w"});
  const auto back = GBDTModel::from_json(nlohmann::json::parse(a.to_json().dump()));
  for (const auto& row : d.X) {
    EXPECT_EQ(a.predict_proba(row), b.predict_proba(row));
    EXPECT_EQ(a.predict_proba(row), back.predict_proba(row));
  }
  EXPECT_EQ(back.feature_names(), a.feature_names());
  EXPECT_EQ(back.importances(), a.importances());
}

TEST(Gbdt, Errors) {
  EXPECT_THROW(gbdt_train({{1.0}, {2.0}}, {1, 1}, GbdtParams{}), ValidationError);
  EXPECT_THROW(gbdt_train({{1.0}}, {1}, GbdtParams{}), ValidationError);
  EXPECT_THROW(gbdt_train({{1.0}, {2.0, 3.0}}, {0, 1}, GbdtParams{}), ValidationError);
  EXPECT_THROW(gbdt_train({{1.0}, {2.0}}, {0, 1}, GbdtParams{}, {"a", "b"}), ValidationError);
  const auto m = gbdt_train({{1.0}, {2.0}}, {0, 1}, GbdtParams{});
  EXPECT_THROW(m.predict_proba({1.0, 2.0}), ValidationError);
}

TEST(CrossValidation, FoldsAreStratifiedAndSeeded) {
  std::vector<int> y(53);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0;
  const auto f = stratified_folds(y, 5, 3);
  EXPECT_EQ(f, stratified_folds(y, 5, 3));
  for (int label = 0; label <= 1; ++label) {
    std::vector<int> count(5, 0);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == label) ++count[static_cast<std::size_t>(f[i])];
    EXPECT_LE(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()), 1);
  }
}

TEST(CrossValidation, PicksFewTreesForPureNoiseAndMoreForSignal) {
  GbdtParams p;
  p.max_trees = 100;
  const auto signal = noisy_world(300, 3, 0, 17);
  auto noise = signal;
  std::mt19937 rng(5);
  std::shuffle(noise.y.begin(), noise.y.end(), rng);
  const int ts = select_tree_count(signal.X, signal.y, p), tn = select_tree_count(noise.X, noise.y, p);
  EXPECT_GE(ts, 1);
  EXPECT_LE(ts, 100);
  EXPECT_LT(tn, ts);
}
