#pragma once

// Ordering metrics, Table-1/Table-2 style reports and 2-D PCA exports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "domsel/downstream.hpp"
#include "domsel/error.hpp"
#include "domsel/meta.hpp"
#include "domsel/util.hpp"

namespace domsel {

/// Sources ranked by mean F1 on the target, descending, ties by name.
inline Ordering true_ordering(const F1Matrix& m, const std::string& target) {
  const auto t = m.index_of(target);
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t s = 0; s < m.domains.size(); ++s) {
    if (static_cast<Eigen::Index>(s) == t) continue;
    scored.emplace_back(m.domains[s], m.mean(static_cast<Eigen::Index>(s), t));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Ordering o{target, {}};
  for (auto& [name, v] : scored) o.ranked_sources.push_back(name);
  return o;
}

namespace detail {
inline void check_comparable(const Ordering& pred, const Ordering& truth) {
  std::multiset<std::string> a(pred.ranked_sources.begin(), pred.ranked_sources.end());
  std::multiset<std::string> b(truth.ranked_sources.begin(), truth.ranked_sources.end());
  if (a != b) throw ValidationError("orderings for target '" + truth.target + "' rank different candidate sets");
}
}  // namespace detail

/// Correct Rank Percentage: fraction of positions holding the same source.
inline double crp(const Ordering& pred, const Ordering& truth) {
  detail::check_comparable(pred, truth);
  if (truth.ranked_sources.empty()) throw ValidationError("crp: empty ordering");
  std::size_t same = 0;
  for (std::size_t i = 0; i < truth.ranked_sources.size(); ++i)
    same += pred.ranked_sources[i] == truth.ranked_sources[i];
  return static_cast<double>(same) / static_cast<double>(truth.ranked_sources.size());
}

/// |top-n(pred) ∩ top-n(truth)| / n
inline double top_n(const Ordering& pred, const Ordering& truth, std::size_t n) {
  detail::check_comparable(pred, truth);
  if (n == 0 || n > truth.ranked_sources.size())
    throw ValidationError("top_n: n = " + std::to_string(n) + " outside [1, " +
                          std::to_string(truth.ranked_sources.size()) + "]");
  std::set<std::string> a(pred.ranked_sources.begin(), pred.ranked_sources.begin() + static_cast<std::ptrdiff_t>(n));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) hit += a.count(truth.ranked_sources[i]);
  return static_cast<double>(hit) / static_cast<double>(n);
}

inline constexpr std::array<const char*, 6> kTable1Metrics = {"F1", "Acc", "CRP", "Top1", "Top3", "Top5"};

/// One LOTO split's meta-classifier result for one variant.
struct TargetResult {
  std::string target;
  double f1 = 0;
  double accuracy = 0;
  Ordering predicted;
  Ordering truth;
};

struct OrderingReport {
  std::string mode;  // predictor | ranker
  std::vector<std::string> variants;
  std::vector<std::string> targets;
  // cells[target][variant] = {F1, Acc, CRP, Top1, Top3, Top5}
  std::map<std::string, std::map<std::string, std::array<double, 6>>> cells;
  std::map<std::string, std::array<double, 6>> average;
};

/// Top-N is evaluated at min(N, #candidates) when fewer than N sources exist.
inline OrderingReport build_table1(const std::string& mode, const std::vector<std::string>& variants,
                                   const std::map<std::string, std::vector<TargetResult>>& results) {
  OrderingReport rep;
  rep.mode = mode;
  rep.variants = variants;
  for (const auto& v : variants) {
    auto it = results.find(v);
    if (it == results.end()) throw ValidationError("build_table1: no results for variant " + v);
    for (const auto& r : it->second) {
      if (std::find(rep.targets.begin(), rep.targets.end(), r.target) == rep.targets.end())
        rep.targets.push_back(r.target);
      const std::size_t len = r.truth.ranked_sources.size();
      auto top = [&](std::size_t n) { return top_n(r.predicted, r.truth, std::min(n, len)); };
      rep.cells[r.target][v] = {r.f1, r.accuracy, crp(r.predicted, r.truth), top(1), top(3), top(5)};
    }
  }
  for (const auto& v : variants) {
    std::array<double, 6> sum{};
    for (const auto& t : rep.targets) {
      auto row = rep.cells.find(t);
      if (row == rep.cells.end() || !row->second.count(v))
        throw ValidationError("build_table1: missing cell (" + mode + ", " + v + ", " + t + ")");
      for (std::size_t k = 0; k < 6; ++k) sum[k] += row->second.at(v)[k];
    }
    for (auto& x : sum) x /= static_cast<double>(rep.targets.size());
    rep.average[v] = sum;
  }
  return rep;
}

inline void save_table1_csv(const OrderingReport& rep, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "target";
  for (const auto& v : rep.variants)
    for (auto m : kTable1Metrics) out << ',' << v << '_' << m;
  out << '\n';
  auto row = [&](const std::string& name, auto&& get) {
    out << name;
    for (const auto& v : rep.variants)
      for (double x : get(v)) out << ',' << format_g17(x);
    out << '\n';
  };
  for (const auto& t : rep.targets) row(t, [&](const std::string& v) { return rep.cells.at(t).at(v); });
  row("AVERAGE", [&](const std::string& v) { return rep.average.at(v); });
}

inline std::string render_table1(const OrderingReport& rep) {
  std::ostringstream os;
  os << (rep.mode == "ranker" ? "Domain Ranker" : "Success Predictor") << '\n' << std::left << std::setw(16) << "";
  for (const auto& v : rep.variants) os << std::setw(36) << v;
  os << '\n' << std::setw(16) << "Target";
  for (std::size_t i = 0; i < rep.variants.size(); ++i)
    for (auto m : kTable1Metrics) os << std::setw(6) << m;
  os << '\n';
  auto line = [&](const std::string& name, auto&& get) {
    os << std::setw(16) << name;
    for (const auto& v : rep.variants)
      for (double x : get(v)) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << x;
        os << std::setw(6) << cell.str();
      }
    os << '\n';
  };
  for (const auto& t : rep.targets) line(t, [&](const std::string& v) { return rep.cells.at(t).at(v); });
  line("AVERAGE", [&](const std::string& v) { return rep.average.at(v); });
  return os.str();
}

struct TransferRow {
  std::string domain;
  double in_domain_f1 = 0;
  std::map<std::string, double> average_f1;  // per variant, over the other domains as sources
  std::map<std::string, int> successes;      // per variant
};

struct TransferReport {
  std::vector<std::string> variants;
  std::vector<TransferRow> rows;
  std::map<std::string, double> mean_normalized;  // per variant, over all ordered pairs
};

/// `matrices` and `labels` are keyed by variant name.
inline TransferReport build_table2(const std::vector<std::string>& variants,
                                   const std::map<std::string, F1Matrix>& matrices,
                                   const std::map<std::string, SuccessLabels>& labels) {
  if (variants.empty()) throw ValidationError("build_table2: no variants");
  TransferReport rep;
  rep.variants = variants;
  auto get = [](const auto& map, const std::string& v, const char* what) -> const auto& {
    auto it = map.find(v);
    if (it == map.end()) throw ValidationError(std::string("build_table2: missing ") + what + " for " + v);
    return it->second;
  };
  const auto& first = get(matrices, variants.front(), "F1 matrix");
  for (std::size_t t = 0; t < first.domains.size(); ++t) {
    TransferRow row;
    row.domain = first.domains[t];
    row.in_domain_f1 = first.at(row.domain, row.domain);
    for (const auto& v : variants) {
      const auto& m = get(matrices, v, "F1 matrix");
      const auto& lab = get(labels, v, "success labels");
      double acc = 0;
      int count = 0, succ = 0;
      for (const auto& s : m.domains) {
        if (s == row.domain) continue;
        acc += m.at(s, row.domain);
        ++count;
        succ += lab.success.at({s, row.domain}) ? 1 : 0;
      }
      row.average_f1[v] = count ? acc / count : 0.0;
      row.successes[v] = succ;
    }
    rep.rows.push_back(std::move(row));
  }
  for (const auto& v : variants) rep.mean_normalized[v] = get(labels, v, "success labels").mean_normalized();
  return rep;
}

inline void save_table2_csv(const TransferReport& rep, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "domain,in_domain_f1";
  for (const auto& v : rep.variants) out << ',' << v << "_avg_f1," << v << "_successes";
  out << '\n';
  for (const auto& r : rep.rows) {
    out << r.domain << ',' << format_g17(r.in_domain_f1);
    for (const auto& v : rep.variants) out << ',' << format_g17(r.average_f1.at(v)) << ',' << r.successes.at(v);
    out << '\n';
  }
  out << "MEAN_NORMALIZED,";
  for (const auto& v : rep.variants) out << ',' << format_g17(rep.mean_normalized.at(v)) << ',';
  out << '\n';
}

inline std::string render_table2(const TransferReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "Domain" << std::setw(10) << "In-dom";
  for (const auto& v : rep.variants) os << std::setw(10) << (v + " F1") << std::setw(8) << "#succ";
  os << '\n';
  auto fmt = [](double x) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << x;
    return c.str();
  };
  for (const auto& r : rep.rows) {
    os << std::setw(16) << r.domain << std::setw(10) << fmt(r.in_domain_f1);
    for (const auto& v : rep.variants) os << std::setw(10) << fmt(r.average_f1.at(v)) << std::setw(8) << r.successes.at(v);
    os << '\n';
  }
  os << std::setw(26) << "Mean normalized F1";
  for (const auto& v : rep.variants) os << std::setw(18) << (v + "=" + fmt(rep.mean_normalized.at(v)));
  os << '\n';
  return os.str();
}

struct Pca2 {
  Eigen::MatrixXd components;  // 2 x dim
  Eigen::Vector2d variances;   // eigenvalues of the covariance
  Eigen::MatrixXd projected;   // 2 x n
};

/// Top two principal components of the columns of X by power iteration with
/// deflation on the sample covariance.
inline Pca2 pca_2d(const Eigen::MatrixXd& X, double tol = 1e-9, int max_iter = 1000) {
  if (X.cols() < 2) throw ValidationError("pca: need at least 2 points");
  const Eigen::MatrixXd centered = X.colwise() - X.rowwise().mean();
  Eigen::MatrixXd C = centered * centered.transpose() / static_cast<double>(X.cols() - 1);
  if (!(C.trace() > 0.0)) throw ValidationError("pca: data has zero variance");
  Pca2 out;
  out.components.resize(2, X.rows());
  Rng rng(0x5eed);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v(X.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = uniform01(rng) - 0.5;
    v.normalize();
    for (int it = 0; it < max_iter; ++it) {
      Eigen::VectorXd next = C * v;
      const double norm = next.norm();
      if (norm == 0.0) break;  // remaining variance is zero
      next /= norm;
      const double diff = (next - v).norm();
      v = next;
      if (diff < tol) break;
    }
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const double lambda = v.dot(C * v);
    out.variances(k) = lambda;
    out.components.row(k) = v.transpose();
    C -= lambda * v * v.transpose();
  }
  out.projected = out.components * centered;
  return out;
}

/// Writes `domain,x,y` rows for the pooled source and target points.
inline void pca_export(const Eigen::MatrixXd& X_s, const Eigen::MatrixXd& X_t, const std::string& source_name,
                       const std::string& target_name, const std::filesystem::path& path) {
  if (X_s.rows() != X_t.rows()) throw ValidationError("pca_export: representation dimensions differ");
  Eigen::MatrixXd X(X_s.rows(), X_s.cols() + X_t.cols());
  X << X_s, X_t;
  const auto pca = pca_2d(X);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "domain,x,y\n";
  for (Eigen::Index i = 0; i < X.cols(); ++i)
    out << (i < X_s.cols() ? source_name : target_name) << ',' << format_g17(pca.projected(0, i)) << ','
        << format_g17(pca.projected(1, i)) << '\n';
}

}  // namespace domsel
