#pragma once

// Text-pair similarity classifier and the cross-domain F1 matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "domsel/adapt.hpp"
#include "domsel/corpus.hpp"
#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

/// [a ; b ; |a - b| ; a * b]
inline VectorXd pair_input(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size())
    throw ValidationError("pair_input: lengths differ (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  const auto d = a.size();
  VectorXd out(4 * d);
  out << a, b, (a - b).cwiseAbs(), a.cwiseProduct(b);
  return out;
}

/// Column-wise pair_input for matrices of sentence vectors.
inline MatrixXd pair_inputs(const MatrixXd& A, const MatrixXd& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw ValidationError("pair_inputs: shape mismatch");
  const auto d = A.rows();
  MatrixXd out(4 * d, A.cols());
  out.topRows(d) = A;
  out.middleRows(d, d) = B;
  out.middleRows(2 * d, d) = (A - B).cwiseAbs();
  out.bottomRows(d) = A.cwiseProduct(B);
  return out;
}

/// F1 of class 1; 0 when precision + recall = 0.
inline double f1_score(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw ValidationError("f1_score: predictions and labels must have equal non-zero length");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == 1 && labels[i] == 1) ++tp;
    else if (predictions[i] == 1) ++fp;
    else if (labels[i] == 1) ++fn;
  }
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw ValidationError("accuracy: predictions and labels must have equal non-zero length");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct ClassifierParams {
  int hidden1 = 128;
  int hidden2 = 32;
  int max_epochs = 50;
  int patience = 5;
  int batch = 32;
  double step = 1e-3;
};

/// Labeled pair inputs, one sample per column.
struct LabeledSet {
  MatrixXd x;
  std::vector<int> y;
};

/// Three dense layers: ReLU(hidden1), ReLU(hidden2), sigmoid output. Inputs
/// are standardized with training-set statistics.
class PairClassifier {
 public:
  struct Params {
    VectorXd mean, scale;
    MatrixXd W1, b1, W2, b2, W3, b3;
  };

  PairClassifier() = default;
  explicit PairClassifier(Params p) : p_(std::move(p)) {}

  int input_dim() const { return static_cast<int>(p_.W1.cols()); }
  const Params& params() const { return p_; }

  VectorXd predict_proba(const MatrixXd& X) const {
    if (X.rows() != p_.W1.cols()) throw ValidationError("PairClassifier: input dimension mismatch");
    const MatrixXd z = (X.colwise() - p_.mean).cwiseProduct(p_.scale.replicate(1, X.cols()));
    const MatrixXd h1 = ((p_.W1 * z).colwise() + p_.b1.col(0)).cwiseMax(0.0);
    const MatrixXd h2 = ((p_.W2 * h1).colwise() + p_.b2.col(0)).cwiseMax(0.0);
    const MatrixXd o = (p_.W3 * h2).colwise() + p_.b3.col(0);
    return o.row(0).transpose().unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
  }

  std::vector<int> predict(const MatrixXd& X) const {
    const VectorXd p = predict_proba(X);
    std::vector<int> out(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) >= 0.5 ? 1 : 0;
    return out;
  }

 private:
  Params p_;
};

struct ClassifierTraining {
  PairClassifier model;
  std::vector<double> val_f1;  // entry 0 before training, entry k after epoch k
  int chosen_epoch = 0;
};

/// Binary cross-entropy, mini-batch Adam, early stopping on validation F1
/// (the best epoch so far, including the untrained state, is kept).
inline ClassifierTraining train_pair_classifier(const LabeledSet& train, const LabeledSet& val, std::uint64_t seed,
                                                const ClassifierParams& cp = {}) {
  const auto n = train.x.cols();
  if (n == 0 || static_cast<std::size_t>(n) != train.y.size())
    throw ValidationError("train_pair_classifier: empty or inconsistent training set");
  const bool has0 = std::count(train.y.begin(), train.y.end(), 0) > 0;
  const bool has1 = std::count(train.y.begin(), train.y.end(), 1) > 0;
  if (!has0 || !has1) throw ValidationError("train_pair_classifier: training set contains a single class");
  if (val.x.cols() > 0 && val.x.rows() != train.x.rows())
    throw ValidationError("train_pair_classifier: validation dimension mismatch");

  const auto D = train.x.rows();
  PairClassifier::Params p;
  p.mean = train.x.rowwise().mean();
  const VectorXd sd =
      ((train.x.colwise() - p.mean).rowwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();
  p.scale = sd.unaryExpr([](double s) { return s > 1e-12 ? 1.0 / s : 1.0; });

  Rng rng(seed);
  auto init = [&](Eigen::Index r, Eigen::Index c, double limit) {
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
    return m;
  };
  const Eigen::Index H1 = cp.hidden1, H2 = cp.hidden2;
  p.W1 = init(H1, D, std::sqrt(6.0 / static_cast<double>(D)));
  p.b1 = MatrixXd::Zero(H1, 1);
  p.W2 = init(H2, H1, std::sqrt(6.0 / static_cast<double>(H1)));
  p.b2 = MatrixXd::Zero(H2, 1);
  p.W3 = init(1, H2, std::sqrt(6.0 / static_cast<double>(H2 + 1)));
  p.b3 = MatrixXd::Zero(1, 1);

  const MatrixXd Z = (train.x.colwise() - p.mean).cwiseProduct(p.scale.replicate(1, n));
  std::vector<MatrixXd*> params{&p.W1, &p.b1, &p.W2, &p.b2, &p.W3, &p.b3};
  std::vector<MatrixXd> m1, m2;
  for (auto* q : params) {
    m1.push_back(MatrixXd::Zero(q->rows(), q->cols()));
    m2.push_back(MatrixXd::Zero(q->rows(), q->cols()));
  }
  detail::Adam adam{cp.step};

  auto val_f1 = [&](const PairClassifier::Params& cur) {
    if (val.x.cols() == 0) return 0.0;
    return f1_score(PairClassifier(cur).predict(val.x), val.y);
  };

  ClassifierTraining out;
  PairClassifier::Params best = p;
  double best_f1 = val_f1(p);
  out.val_f1.push_back(best_f1);
  int since_best = 0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 1; epoch <= cp.max_epochs; ++epoch) {
    shuffle(order, rng);
    for (Eigen::Index start = 0; start < n; start += cp.batch) {
      const Eigen::Index bs = std::min<Eigen::Index>(cp.batch, n - start);
      MatrixXd xb(D, bs);
      VectorXd yb(bs);
      for (Eigen::Index j = 0; j < bs; ++j) {
        const auto idx = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = Z.col(idx);
        yb(j) = train.y[static_cast<std::size_t>(idx)];
      }
      const MatrixXd a1 = (p.W1 * xb).colwise() + p.b1.col(0);
      const MatrixXd h1 = a1.cwiseMax(0.0);
      const MatrixXd a2 = (p.W2 * h1).colwise() + p.b2.col(0);
      const MatrixXd h2 = a2.cwiseMax(0.0);
      const MatrixXd o = (p.W3 * h2).colwise() + p.b3.col(0);
      MatrixXd dout(1, bs);
      for (Eigen::Index j = 0; j < bs; ++j) {
        const double v = o(0, j);
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        dout(0, j) = (s - yb(j)) / static_cast<double>(bs);
      }
      const MatrixXd gW3 = dout * h2.transpose();
      const MatrixXd gb3 = dout.rowwise().sum();
      const MatrixXd d2 = (p.W3.transpose() * dout).cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
      const MatrixXd gW2 = d2 * h1.transpose();
      const MatrixXd gb2 = d2.rowwise().sum();
      const MatrixXd d1 = (p.W2.transpose() * d2).cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
      const MatrixXd gW1 = d1 * xb.transpose();
      const MatrixXd gb1 = d1.rowwise().sum();
      const MatrixXd* grads[] = {&gW1, &gb1, &gW2, &gb2, &gW3, &gb3};
      ++adam.t;
      const double c1 = 1.0 - std::pow(adam.b1, static_cast<double>(adam.t));
      const double c2 = 1.0 - std::pow(adam.b2, static_cast<double>(adam.t));
      for (std::size_t k = 0; k < params.size(); ++k) adam.step(*params[k], m1[k], m2[k], *grads[k], c1, c2);
    }
    if (!p.W1.allFinite() || !p.W3.allFinite()) throw ComputationError("train_pair_classifier: parameters diverged");
    const double f = val_f1(p);
    out.val_f1.push_back(f);
    if (val.x.cols() == 0) {
      best = p;
      out.chosen_epoch = epoch;
      continue;
    }
    if (f > best_f1) {
      best_f1 = f;
      best = p;
      out.chosen_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cp.patience) {
      break;
    }
  }
  out.model = PairClassifier(std::move(best));
  return out;
}

/// Sentence vectors for one split of a domain: column i of `a`/`b` holds the
/// two texts of example i.
struct EmbeddedSplit {
  MatrixXd a;
  MatrixXd b;
  std::vector<int> labels;
};

struct EmbeddedDomain {
  std::string name;
  EmbeddedSplit train, val, test;
};

inline LabeledSet encode_pairs(const AdaptModel& model, const EmbeddedSplit& s) {
  return LabeledSet{pair_inputs(encode(model, s.a), encode(model, s.b)), s.labels};
}

struct F1Matrix {
  std::vector<std::string> domains;
  AdaptVariant variant = AdaptVariant::none;
  std::vector<std::uint64_t> seeds;
  std::vector<MatrixXd> per_seed;  // rows = source, cols = target
  MatrixXd mean;

  Eigen::Index index_of(const std::string& d) const {
    auto it = std::find(domains.begin(), domains.end(), d);
    if (it == domains.end()) throw ValidationError("F1 matrix has no domain '" + d + "'");
    return it - domains.begin();
  }
  double at(const std::string& source, const std::string& target) const {
    return mean(index_of(source), index_of(target));
  }
};

using AdaptLookup = std::function<const AdaptModel&(const std::string& source, const std::string& target)>;

/// Fills F1[S][T] for every ordered pair and seed. Off-diagonal cells train on
/// S's train split (S's val split for early stopping) under the pair's adapted
/// representation and score T's test split. The diagonal is the in-domain
/// model on the unadapted representation, shared by every variant.
inline F1Matrix cross_domain_matrix(const std::vector<EmbeddedDomain>& domains, AdaptVariant variant,
                                    const AdaptLookup& models, const std::vector<std::uint64_t>& seeds,
                                    const ClassifierParams& cp = {}, unsigned jobs = 1) {
  if (domains.empty()) throw ValidationError("cross_domain_matrix: no domains");
  if (seeds.empty()) throw ValidationError("cross_domain_matrix: no seeds");
  const auto nd = static_cast<Eigen::Index>(domains.size());
  F1Matrix m;
  for (const auto& d : domains) m.domains.push_back(d.name);
  m.variant = variant;
  m.seeds = seeds;
  m.per_seed.assign(seeds.size(), MatrixXd::Zero(nd, nd));

  const AdaptModel identity = identity_model(static_cast<int>(domains.front().train.a.rows()));

  // Unadapted per-source classifiers: diagonal for every variant, full rows for DT.
  const std::size_t n_src_jobs = seeds.size() * domains.size();
  parallel_for(n_src_jobs, jobs, [&](std::size_t job) {
    const std::size_t k = job / domains.size();
    const std::size_t s = job % domains.size();
    const auto& src = domains[s];
    const auto trained =
        train_pair_classifier(encode_pairs(identity, src.train), encode_pairs(identity, src.val), seeds[k], cp);
    for (std::size_t t = 0; t < domains.size(); ++t) {
      if (variant != AdaptVariant::none && t != s) continue;
      const auto test = encode_pairs(identity, domains[t].test);
      m.per_seed[k](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
          f1_score(trained.model.predict(test.x), test.y);
    }
  });

  if (variant != AdaptVariant::none) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t s = 0; s < domains.size(); ++s)
      for (std::size_t t = 0; t < domains.size(); ++t)
        if (s != t) pairs.emplace_back(s, t);
    parallel_for(pairs.size() * seeds.size(), jobs, [&](std::size_t job) {
      const std::size_t k = job / pairs.size();
      const auto [s, t] = pairs[job % pairs.size()];
      const AdaptModel& model = models(domains[s].name, domains[t].name);
      const auto trained = train_pair_classifier(encode_pairs(model, domains[s].train),
                                                 encode_pairs(model, domains[s].val), seeds[k], cp);
      const auto test = encode_pairs(model, domains[t].test);
      m.per_seed[k](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
          f1_score(trained.model.predict(test.x), test.y);
    });
  }

  m.mean = MatrixXd::Zero(nd, nd);
  for (const auto& ps : m.per_seed) m.mean += ps;
  m.mean /= static_cast<double>(seeds.size());
  return m;
}

struct SuccessLabels {
  double threshold = 0.8;
  std::map<std::pair<std::string, std::string>, double> normalized;  // includes (T, T) = 1
  std::map<std::pair<std::string, std::string>, bool> success;       // source != target only

  /// Mean normalized score over ordered pairs with source != target.
  double mean_normalized() const {
    double acc = 0;
    std::size_t n = 0;
    for (const auto& [key, v] : normalized) {
      if (key.first == key.second) continue;
      acc += v;
      ++n;
    }
    return n ? acc / static_cast<double>(n) : 0.0;
  }
};

/// normalized(S, T) = F1_ST / F1_TT; success iff strictly above threshold.
inline SuccessLabels success_labels(const F1Matrix& m, double threshold = 0.8) {
  SuccessLabels out;
  out.threshold = threshold;
  for (Eigen::Index t = 0; t < m.mean.cols(); ++t) {
    const double diag = m.mean(t, t);
    if (!(diag > 0.0))
      throw ComputationError("success_labels: in-domain F1 of " + m.domains[static_cast<std::size_t>(t)] +
                             " is zero");
    for (Eigen::Index s = 0; s < m.mean.rows(); ++s) {
      const auto key = std::make_pair(m.domains[static_cast<std::size_t>(s)], m.domains[static_cast<std::size_t>(t)]);
      const double ratio = s == t ? 1.0 : m.mean(s, t) / diag;
      out.normalized[key] = ratio;
      if (s != t) out.success[key] = ratio > threshold;
    }
  }
  return out;
}

inline void save_matrix_csv(const std::vector<std::string>& domains, const MatrixXd& m,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "source";
  for (const auto& d : domains) out << ',' << d;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << domains[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_g17(m(i, j));
    out << '\n';
  }
}

inline MatrixXd load_matrix_csv(const std::filesystem::path& path, std::vector<std::string>* domains = nullptr) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2) throw ValidationError(path.string() + ": bad header");
  const auto n = static_cast<Eigen::Index>(header.size() - 1);
  MatrixXd m(n, n);
  Eigen::Index row = 0;
  while (std::getline(in, line) && row < n) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::getline(ss, cell, ',')) throw ValidationError(path.string() + ": short row");
      auto v = detail::parse_number(cell);
      if (!v) throw ValidationError(path.string() + ": bad number");
      m(row, j) = *v;
    }
    ++row;
  }
  if (row != n) throw ValidationError(path.string() + ": expected " + std::to_string(n) + " rows");
  if (domains) domains->assign(header.begin() + 1, header.end());
  return m;
}

/// One CSV per seed plus the mean, and manifest.json {variant, seeds, threshold}.
inline void save_f1_matrix(const F1Matrix& m, double threshold, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < m.seeds.size(); ++k)
    save_matrix_csv(m.domains, m.per_seed[k], dir / ("f1_seed" + std::to_string(m.seeds[k]) + ".csv"));
  save_matrix_csv(m.domains, m.mean, dir / "f1_mean.csv");
  nlohmann::ordered_json j;
  j["variant"] = variant_name(m.variant);
  j["seeds"] = m.seeds;
  j["threshold"] = threshold;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << j.dump(1) << '\n';
}

inline F1Matrix load_f1_matrix(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValidationError("missing F1 matrix manifest in " + dir.string());
  F1Matrix m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "manifest.json").string() + ": " + e.what());
  }
  for (auto s : m.seeds) m.per_seed.push_back(load_matrix_csv(dir / ("f1_seed" + std::to_string(s) + ".csv")));
  m.mean = load_matrix_csv(dir / "f1_mean.csv", &m.domains);
  return m;
}

}  // namespace domsel
