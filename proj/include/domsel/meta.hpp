#pragma once

// Success Predictor and Domain Ranker meta-models, leave-one-target-out
// splits, and multi-sort rank aggregation.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "domsel/downstream.hpp"
#include "domsel/error.hpp"
#include "domsel/gbdt.hpp"
#include "domsel/simfeat.hpp"
#include "domsel/util.hpp"

namespace domsel {

struct PairKey {
  std::string source;
  std::string target;
  auto operator<=>(const PairKey&) const = default;
};

/// Unordered source pair for one target, canonicalized with s1 < s2.
struct RankerKey {
  std::string target;
  std::string s1;
  std::string s2;
  auto operator<=>(const RankerKey&) const = default;
};

struct Ordering {
  std::string target;
  std::vector<std::string> ranked_sources;  // best first
};

template <typename Key>
struct LotoSplit {
  std::string target;
  std::vector<Key> train;
  std::vector<Key> test;
};

namespace detail {
inline void check_domains(const std::vector<std::string>& domains) {
  if (domains.size() < 3) throw ValidationError("leave-one-target-out needs at least 3 domains");
  std::set<std::string> unique(domains.begin(), domains.end());
  if (unique.size() != domains.size()) throw ValidationError("duplicate domain names");
}
}  // namespace detail

/// One split per domain D: every ordered pair (S, D) is test, all other
/// ordered pairs with S != T are train.
inline std::vector<LotoSplit<PairKey>> loto_predictor_splits(const std::vector<std::string>& domains) {
  detail::check_domains(domains);
  std::vector<LotoSplit<PairKey>> out;
  for (const auto& held : domains) {
    LotoSplit<PairKey> split{held, {}, {}};
    for (const auto& t : domains)
      for (const auto& s : domains) {
        if (s == t) continue;
        (t == held ? split.test : split.train).push_back({s, t});
      }
    out.push_back(std::move(split));
  }
  return out;
}

/// Ranker counterpart: samples are (target, {s1 < s2}).
inline std::vector<LotoSplit<RankerKey>> loto_ranker_splits(const std::vector<std::string>& domains) {
  detail::check_domains(domains);
  std::vector<std::string> sorted = domains;
  std::sort(sorted.begin(), sorted.end());
  std::vector<LotoSplit<RankerKey>> out;
  for (const auto& held : domains) {
    LotoSplit<RankerKey> split{held, {}, {}};
    for (const auto& t : domains)
      for (std::size_t i = 0; i < sorted.size(); ++i)
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
          if (sorted[i] == t || sorted[j] == t) continue;
          (t == held ? split.test : split.train).push_back({t, sorted[i], sorted[j]});
        }
    out.push_back(std::move(split));
  }
  return out;
}

using FeatureTable = std::map<PairKey, FeatureVector>;

inline FeatureTable feature_table(const std::vector<FeatureVector>& rows) {
  FeatureTable t;
  for (const auto& r : rows) t[{r.source, r.target}] = r;
  return t;
}

inline std::vector<std::string> predictor_feature_names() {
  return {kFeatureNames.begin(), kFeatureNames.end()};
}

inline std::vector<std::string> ranker_feature_names() {
  std::vector<std::string> names;
  for (const char* prefix : {"s1_", "s2_"})
    for (auto n : kFeatureNames) names.push_back(std::string(prefix) + n);
  return names;
}

struct RankerSample {
  RankerKey key;
  std::vector<double> features;  // F^{s1 T} followed by F^{s2 T}
  int label = 0;                 // 1 iff F1_{s1 T} >= F1_{s2 T}
};

inline RankerSample make_ranker_sample(const RankerKey& key, const FeatureTable& features, const F1Matrix& f1) {
  if (!(key.s1 < key.s2)) throw ValidationError("ranker sample sources must satisfy s1 < s2");
  auto find = [&](const std::string& s) -> const FeatureVector& {
    auto it = features.find({s, key.target});
    if (it == features.end()) throw ValidationError("missing feature vector " + s + "->" + key.target);
    return it->second;
  };
  RankerSample out{key, {}, 0};
  for (double v : find(key.s1).f) out.features.push_back(v);
  for (double v : find(key.s2).f) out.features.push_back(v);
  out.label = f1.at(key.s1, key.target) >= f1.at(key.s2, key.target) ? 1 : 0;
  return out;
}

/// Randomized quicksort repeated on independently shuffled copies; items are
/// ranked by ascending mean position, ties by name. `before(a, b)` says a
/// belongs ahead of b and may be noisy or inconsistent.
inline Ordering multi_sort(const std::vector<std::string>& items,
                           const std::function<bool(const std::string&, const std::string&)>& before, int repeats,
                           std::uint64_t seed, std::string target = {}) {
  if (repeats < 1) throw ValidationError("multi_sort: repeats must be >= 1");
  std::function<std::vector<std::string>(std::vector<std::string>)> quicksort =
      [&](std::vector<std::string> v) -> std::vector<std::string> {
    if (v.size() <= 1) return v;
    const std::string pivot = v.front();
    std::vector<std::string> lo, hi;
    for (std::size_t i = 1; i < v.size(); ++i) (before(v[i], pivot) ? lo : hi).push_back(v[i]);
    auto out = quicksort(std::move(lo));
    out.push_back(pivot);
    for (auto& x : quicksort(std::move(hi))) out.push_back(std::move(x));
    return out;
  };

  Rng rng(seed);
  std::map<std::string, double> position_sum;
  for (const auto& it : items) position_sum[it] = 0.0;
  for (int r = 0; r < repeats; ++r) {
    auto copy = items;
    shuffle(copy, rng);
    const auto sorted = quicksort(std::move(copy));
    for (std::size_t i = 0; i < sorted.size(); ++i) position_sum[sorted[i]] += static_cast<double>(i);
  }
  Ordering out{std::move(target), items};
  std::sort(out.ranked_sources.begin(), out.ranked_sources.end(), [&](const std::string& a, const std::string& b) {
    const double pa = position_sum[a], pb = position_sum[b];
    return pa != pb ? pa < pb : a < b;
  });
  return out;
}

struct MetaParams {
  GbdtParams gbdt;
  int repeats = 11;  // multi-sort
  double decision_threshold = 0.5;
};

/// Held-out result of one leave-one-target-out split.
struct MetaOutcome {
  std::string target;
  GBDTModel model;
  int trees = 0;
  Ordering ordering;
  std::vector<double> test_proba;
  std::vector<int> test_pred;
  std::vector<int> test_label;

  double f1() const { return f1_score(test_pred, test_label); }
  double accuracy() const { return domsel::accuracy(test_pred, test_label); }
};

namespace detail {
inline GBDTModel fit_with_cv(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                             const GbdtParams& params, std::vector<std::string> names, int* trees) {
  GbdtParams p = params;
  p.max_trees = select_tree_count(X, y, params);
  *trees = p.max_trees;
  return gbdt_train(X, y, p, std::move(names));
}
}  // namespace detail

/// Trains on the split's train pairs and orders the held-out target's sources
/// by predicted success probability (descending, ties by name).
inline MetaOutcome success_predictor(const FeatureTable& features,
                                     const std::map<std::pair<std::string, std::string>, bool>& success,
                                     const LotoSplit<PairKey>& split, const MetaParams& params = {}) {
  auto row = [&](const PairKey& k) {
    auto it = features.find(k);
    if (it == features.end()) throw ValidationError("missing feature vector " + k.source + "->" + k.target);
    return std::vector<double>(it->second.f.begin(), it->second.f.end());
  };
  auto label = [&](const PairKey& k) {
    auto it = success.find({k.source, k.target});
    if (it == success.end()) throw ValidationError("missing success label " + k.source + "->" + k.target);
    return it->second ? 1 : 0;
  };
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (const auto& k : split.train) {
    X.push_back(row(k));
    y.push_back(label(k));
  }
  MetaOutcome out;
  out.target = split.target;
  out.model = detail::fit_with_cv(X, y, params.gbdt, predictor_feature_names(), &out.trees);

  std::vector<std::pair<std::string, double>> scored;
  for (const auto& k : split.test) {
    const double p = out.model.predict_proba(row(k));
    out.test_proba.push_back(p);
    out.test_pred.push_back(p >= params.decision_threshold ? 1 : 0);
    out.test_label.push_back(label(k));
    scored.emplace_back(k.source, p);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  out.ordering.target = split.target;
  for (const auto& [s, p] : scored) out.ordering.ranked_sources.push_back(s);
  return out;
}

/// Pairwise preference classifier; the held-out target's sources are ordered
/// by multi_sort with the predicted preference as comparator.
inline MetaOutcome domain_ranker(const std::map<RankerKey, RankerSample>& samples, const LotoSplit<RankerKey>& split,
                                 const MetaParams& params = {}) {
  auto sample = [&](const RankerKey& k) -> const RankerSample& {
    auto it = samples.find(k);
    if (it == samples.end()) throw ValidationError("missing ranker sample for target " + k.target);
    return it->second;
  };
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (const auto& k : split.train) {
    X.push_back(sample(k).features);
    y.push_back(sample(k).label);
  }
  MetaOutcome out;
  out.target = split.target;
  out.model = detail::fit_with_cv(X, y, params.gbdt, ranker_feature_names(), &out.trees);

  std::map<std::pair<std::string, std::string>, double> pref;
  std::set<std::string> candidates;
  for (const auto& k : split.test) {
    const auto& s = sample(k);
    const double p = out.model.predict_proba(s.features);
    pref[{k.s1, k.s2}] = p;
    candidates.insert(k.s1);
    candidates.insert(k.s2);
    out.test_proba.push_back(p);
    out.test_pred.push_back(p >= params.decision_threshold ? 1 : 0);
    out.test_label.push_back(s.label);
  }
  auto before = [&](const std::string& a, const std::string& b) {
    if (a < b) return pref.at({a, b}) >= params.decision_threshold;
    return pref.at({b, a}) < params.decision_threshold;
  };
  out.ordering = multi_sort({candidates.begin(), candidates.end()}, before, params.repeats,
                            derive_seed(params.gbdt.seed, "multisort/" + split.target), split.target);
  return out;
}

inline std::map<std::string, double> feature_importance(const GBDTModel& model) {
  std::map<std::string, double> out;
  const auto imp = model.importances();
  for (std::size_t i = 0; i < imp.size(); ++i) out[model.feature_names()[i]] = imp[i];
  return out;
}

}  // namespace domsel
