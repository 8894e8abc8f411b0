#pragma once

// Cross-domain similarity features f1..f10 for an ordered (source, target) pair.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "domsel/corpus.hpp"
#include "domsel/embed.hpp"
#include "domsel/error.hpp"
#include "domsel/ngram_lm.hpp"
#include "domsel/util.hpp"

namespace domsel {

/// (|U_S ∩ U_T| / |U_S|, |U_S ∩ U_T| / |U_T|)
inline std::pair<double, double> coverage(const UnigramStats& source, const UnigramStats& target) {
  if (source.counts.empty() || target.counts.empty()) throw ValidationError("coverage: empty unigram set");
  std::size_t common = 0;
  auto a = source.counts.begin();
  auto b = target.counts.begin();
  while (a != source.counts.end() && b != target.counts.end()) {
    if (a->first < b->first) ++a;
    else if (b->first < a->first) ++b;
    else {
      ++common;
      ++a;
      ++b;
    }
  }
  return {static_cast<double>(common) / static_cast<double>(source.counts.size()),
          static_cast<double>(common) / static_cast<double>(target.counts.size())};
}

/// Probabilities over an explicit, sorted support.
struct UnigramDistribution {
  std::vector<std::string> support;
  std::vector<double> probs;
};

inline std::vector<std::string> union_support(const UnigramStats& a, const UnigramStats& b) {
  std::vector<std::string> out;
  out.reserve(a.counts.size() + b.counts.size());
  for (const auto& [t, c] : a.counts) out.push_back(t);
  for (const auto& [t, c] : b.counts) out.push_back(t);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Additive smoothing: (count + epsilon) / (total + epsilon * |support|).
inline UnigramDistribution smoothed_distribution(const UnigramStats& stats, const std::vector<std::string>& support,
                                                 double epsilon = 0.5) {
  if (epsilon <= 0) throw ValidationError("smoothing pseudo-count must be positive");
  UnigramDistribution d{support, std::vector<double>(support.size())};
  double denom = epsilon * static_cast<double>(support.size());
  for (const auto& t : support) {
    auto it = stats.counts.find(t);
    if (it != stats.counts.end()) denom += static_cast<double>(it->second);
  }
  for (std::size_t i = 0; i < support.size(); ++i) {
    auto it = stats.counts.find(support[i]);
    const double c = it == stats.counts.end() ? 0.0 : static_cast<double>(it->second);
    d.probs[i] = (c + epsilon) / denom;
  }
  return d;
}

namespace detail {
inline void check_aligned(const UnigramDistribution& p, const UnigramDistribution& q) {
  if (p.probs.size() != q.probs.size() || p.support != q.support)
    throw ValidationError("divergence: distributions must share one support");
  if (p.probs.empty()) throw ValidationError("divergence: empty support");
}
}  // namespace detail

/// KL(p || q) in bits.
inline double kl_divergence(const UnigramDistribution& p, const UnigramDistribution& q) {
  detail::check_aligned(p, q);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    if (q.probs[i] <= 0.0)
      throw ValidationError("kl_divergence: q is zero on the support of p at '" + p.support[i] +
                            "' (smooth both distributions first)");
    kl += p.probs[i] * std::log2(p.probs[i] / q.probs[i]);
  }
  return std::max(kl, 0.0);
}

/// Rényi divergence of order alpha in bits:
///   1/(alpha-1) * log2 sum_v p(v)^alpha q(v)^(1-alpha)
/// evaluated as p * (q/p)^(1-alpha), normalized by sum p, so that p == q gives 0 exactly.
inline double renyi_divergence(const UnigramDistribution& p, const UnigramDistribution& q, double alpha) {
  if (alpha == 1.0) throw ValidationError("renyi_divergence: alpha = 1 is the KL limit, use kl_divergence");
  if (!(alpha > 0.0)) throw ValidationError("renyi_divergence: alpha must be positive");
  detail::check_aligned(p, q);
  double acc = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    if (q.probs[i] <= 0.0) {
      if (alpha > 1.0) throw ValidationError("renyi_divergence: q is zero on the support of p");
      mass += p.probs[i];
      continue;
    }
    acc += p.probs[i] * std::pow(q.probs[i] / p.probs[i], 1.0 - alpha);
    mass += p.probs[i];
  }
  return std::max(std::log2(acc / mass) / (alpha - 1.0), 0.0);
}

/// Mean over `shared` of the L1 distance between the two tables' vectors.
inline double word_vector_variance(const EmbeddingTable& source, const EmbeddingTable& target,
                                   const std::vector<std::string>& shared) {
  if (shared.empty()) throw ValidationError("word_vector_variance: no shared tokens");
  if (source.dim() != target.dim())
    throw ValidationError("word_vector_variance: dimension mismatch (" + std::to_string(source.dim()) + " vs " +
                          std::to_string(target.dim()) + ")");
  double total = 0.0;
  for (const auto& tok : shared) {
    auto a = source.find(tok);
    auto b = target.find(tok);
    if (!a || !b) throw ValidationError("word_vector_variance: token '" + tok + "' missing from a table");
    for (std::size_t j = 0; j < a->size(); ++j) total += std::abs((*a)[j] - (*b)[j]);
  }
  return total / static_cast<double>(shared.size());
}

inline constexpr std::array<const char*, 10> kFeatureNames = {"f1", "f2", "f3", "f4", "f5",
                                                              "f6", "f7", "f8", "f9", "f10"};

/// f1/f2 coverage, f3/f4 train example counts, f5/f6 tokens per text,
/// f7 Rényi(P_T || P_S), f8 KL(P_T || P_S), f9 source-LM perplexity on the
/// target, f10 word vector variance over shared unigrams.
struct FeatureVector {
  std::string source;
  std::string target;
  std::array<double, 10> f{};

  double operator[](std::size_t i) const { return f[i]; }
};

struct FeatureParams {
  double renyi_alpha = 0.99;
  double smoothing = 0.5;
};

/// All features are computed on the train splits.
inline FeatureVector feature_vector(const DomainCorpus& source, const DomainCorpus& target,
                                    const EmbeddingTable& source_table, const EmbeddingTable& target_table,
                                    const TrigramLM& source_lm, const FeatureParams& params = {}) {
  const auto st_s = unigram_stats(source, Split::train);
  const auto st_t = unigram_stats(target, Split::train);
  FeatureVector fv{source.name(), target.name(), {}};
  auto [f1, f2] = coverage(st_s, st_t);
  fv.f[0] = f1;
  fv.f[1] = f2;
  fv.f[2] = static_cast<double>(st_s.example_count);
  fv.f[3] = static_cast<double>(st_t.example_count);
  fv.f[4] = st_s.avg_tokens_per_example;
  fv.f[5] = st_t.avg_tokens_per_example;

  const auto support = union_support(st_s, st_t);
  const auto p_s = smoothed_distribution(st_s, support, params.smoothing);
  const auto p_t = smoothed_distribution(st_t, support, params.smoothing);
  fv.f[6] = renyi_divergence(p_t, p_s, params.renyi_alpha);
  fv.f[7] = kl_divergence(p_t, p_s);
  fv.f[8] = perplexity(source_lm, target, Split::train);

  std::vector<std::string> shared;
  for (const auto& [tok, c] : st_s.counts)
    if (st_t.contains(tok)) shared.push_back(tok);
  fv.f[9] = word_vector_variance(source_table, target_table, shared);

  for (double x : fv.f)
    if (!std::isfinite(x)) throw ComputationError("non-finite feature for " + fv.source + "->" + fv.target);
  return fv;
}

/// CSV: header source,target,f1..f10; 17 significant digits.
inline void save_features(const std::vector<FeatureVector>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "source,target";
  for (auto n : kFeatureNames) out << ',' << n;
  out << '\n';
  for (const auto& r : rows) {
    out << r.source << ',' << r.target;
    for (double x : r.f) out << ',' << format_g17(x);
    out << '\n';
  }
}

inline std::vector<FeatureVector> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<FeatureVector> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 12) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 12 cells");
    FeatureVector fv{cells[0], cells[1], {}};
    for (std::size_t i = 0; i < 10; ++i) {
      auto v = detail::parse_number(cells[i + 2]);
      if (!v) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad number");
      fv.f[i] = *v;
    }
    rows.push_back(fv);
  }
  return rows;
}

}  // namespace domsel
