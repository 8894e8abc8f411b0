#pragma once

// Skipgram word embeddings with negative sampling, and sentence embeddings
// (mean-pooled word vectors or precomputed vectors loaded from a file).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "domsel/corpus.hpp"
#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::string domain, int dim) : domain_(std::move(domain)), dim_(dim) {
    if (dim <= 0) throw ValidationError("embedding dimension must be positive");
  }

  const std::string& domain() const { return domain_; }
  int dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void add(const std::string& token, std::span<const double> vec) {
    if (static_cast<int>(vec.size()) != dim_)
      throw ValidationError("vector for '" + token + "' has length " + std::to_string(vec.size()) + ", expected " +
                            std::to_string(dim_));
    for (double x : vec)
      if (!std::isfinite(x)) throw ComputationError("non-finite embedding component for '" + token + "'");
    if (index_.count(token)) throw ValidationError("duplicate embedding token '" + token + "'");
    index_.emplace(token, tokens_.size());
    tokens_.push_back(token);
    data_.insert(data_.end(), vec.begin(), vec.end());
  }

  std::optional<std::span<const double>> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return std::span<const double>(data_.data() + it->second * static_cast<std::size_t>(dim_),
                                   static_cast<std::size_t>(dim_));
  }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.tokens_ == b.tokens_ && a.data_ == b.data_;
  }

 private:
  std::string domain_;
  int dim_ = 0;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
};

struct SkipgramParams {
  int dim = 32;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double alpha_start = 0.025;
  double alpha_end = 0.0001;
  std::uint64_t seed = 1;
};

struct SkipgramResult {
  EmbeddingTable table;
  /// Negative-sampling loss on a fixed batch of sampled pairs: entry 0 before
  /// training, entry k after epoch k.
  std::vector<double> epoch_loss;
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class NegativeSampler {
 public:
  explicit NegativeSampler(const std::vector<std::int64_t>& counts) {
    cumulative_.reserve(counts.size());
    double acc = 0.0;
    for (auto c : counts) {
      acc += std::pow(static_cast<double>(c), 0.75);
      cumulative_.push_back(acc);
    }
  }
  std::uint32_t sample(Rng& rng) const {
    const double r = uniform01(rng) * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    if (it == cumulative_.end()) --it;
    return static_cast<std::uint32_t>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace detail

/// Collects the token sequences the embedding is trained on: both texts of
/// each train-split example (all examples for an unsplit corpus).
inline std::vector<std::vector<std::string>> training_texts(const DomainCorpus& corpus) {
  const std::optional<Split> filter = corpus.has_splits() ? std::optional<Split>(Split::train) : std::nullopt;
  std::vector<std::vector<std::string>> texts;
  for (std::size_t i : corpus.indices(filter)) {
    texts.push_back(corpus.examples()[i].tokens_a);
    texts.push_back(corpus.examples()[i].tokens_b);
  }
  return texts;
}

/// Single-threaded skipgram with negative sampling (unigram^0.75 noise,
/// word2vec-style reduced window, linearly decaying step size). The result is
/// a pure function of the texts and params.
inline SkipgramResult train_skipgram(const std::vector<std::vector<std::string>>& texts, const std::string& domain,
                                     const SkipgramParams& params) {
  if (params.dim <= 0 || params.window <= 0 || params.negatives < 0 || params.epochs <= 0)
    throw ValidationError("skipgram: dim, window and epochs must be positive, negatives non-negative");
  std::map<std::string, std::int64_t> vocab_counts;
  for (const auto& t : texts)
    for (const auto& tok : t) ++vocab_counts[tok];
  if (vocab_counts.size() < 2)
    throw ValidationError("skipgram: domain " + domain + " needs at least 2 distinct tokens");

  std::vector<std::string> vocab;
  std::vector<std::int64_t> counts;
  std::unordered_map<std::string, std::uint32_t> ids;
  for (const auto& [tok, c] : vocab_counts) {
    ids.emplace(tok, static_cast<std::uint32_t>(vocab.size()));
    vocab.push_back(tok);
    counts.push_back(c);
  }
  std::vector<std::vector<std::uint32_t>> sentences;
  std::int64_t total_tokens = 0;
  for (const auto& t : texts) {
    std::vector<std::uint32_t> s;
    for (const auto& tok : t) s.push_back(ids.at(tok));
    total_tokens += static_cast<std::int64_t>(s.size());
    sentences.push_back(std::move(s));
  }

  const std::size_t V = vocab.size();
  const auto d = static_cast<std::size_t>(params.dim);
  Rng rng(params.seed);
  std::vector<double> in(V * d), out(V * d, 0.0);
  // Initial vectors depend on (seed, token) only, so a token shared by two
  // domains starts from the same point in both tables.
  for (std::size_t v = 0; v < V; ++v) {
    Rng init(derive_seed(params.seed, "init/" + vocab[v]));
    for (std::size_t k = 0; k < d; ++k) in[v * d + k] = (uniform01(init) - 0.5) / static_cast<double>(d);
  }
  const detail::NegativeSampler sampler(counts);

  // Fixed evaluation batch of (center, context, negatives...) tuples.
  struct EvalPair {
    std::uint32_t center, context;
    std::vector<std::uint32_t> negs;
  };
  std::vector<EvalPair> eval;
  {
    Rng erng(derive_seed(params.seed, "skipgram-eval"));
    std::vector<std::size_t> nonempty;
    for (std::size_t s = 0; s < sentences.size(); ++s)
      if (sentences[s].size() >= 2) nonempty.push_back(s);
    for (std::size_t k = 0; k < 1000 && !nonempty.empty(); ++k) {
      const auto& s = sentences[nonempty[uniform_index(erng, nonempty.size())]];
      const std::size_t i = uniform_index(erng, s.size());
      std::size_t j = uniform_index(erng, s.size() - 1);
      if (j >= i) ++j;
      EvalPair p{s[i], s[j], {}};
      for (int n = 0; n < params.negatives; ++n) p.negs.push_back(sampler.sample(erng));
      eval.push_back(std::move(p));
    }
  }
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += in[a * d + k] * out[b * d + k];
    return s;
  };
  auto eval_loss = [&] {
    if (eval.empty()) return 0.0;
    double loss = 0.0;
    for (const auto& p : eval) {
      loss -= std::log(std::max(detail::sigmoid(dot(p.center, p.context)), 1e-300));
      for (auto n : p.negs) loss -= std::log(std::max(detail::sigmoid(-dot(p.center, n)), 1e-300));
    }
    return loss / static_cast<double>(eval.size());
  };

  SkipgramResult result;
  result.epoch_loss.push_back(eval_loss());
  const double total_work = static_cast<double>(total_tokens) * params.epochs;
  double processed = 0.0;
  std::vector<double> grad(d);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    for (const auto& s : sentences) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double alpha = std::max(
            params.alpha_end, params.alpha_start - (params.alpha_start - params.alpha_end) * processed / total_work);
        processed += 1.0;
        const auto reduce = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(params.window)));
        const int span = params.window - reduce;
        for (int off = -span; off <= span; ++off) {
          if (off == 0) continue;
          const auto j = static_cast<std::ptrdiff_t>(i) + off;
          if (j < 0 || j >= static_cast<std::ptrdiff_t>(s.size())) continue;
          const std::size_t center = s[i];
          const std::size_t context = s[static_cast<std::size_t>(j)];
          std::fill(grad.begin(), grad.end(), 0.0);
          for (int n = 0; n <= params.negatives; ++n) {
            std::size_t target;
            double label;
            if (n == 0) {
              target = context;
              label = 1.0;
            } else {
              target = sampler.sample(rng);
              if (target == context) continue;
              label = 0.0;
            }
            const double g = (label - detail::sigmoid(dot(center, target))) * alpha;
            for (std::size_t k = 0; k < d; ++k) {
              grad[k] += g * out[target * d + k];
              out[target * d + k] += g * in[center * d + k];
            }
          }
          for (std::size_t k = 0; k < d; ++k) in[center * d + k] += grad[k];
        }
      }
    }
    result.epoch_loss.push_back(eval_loss());
  }

  result.table = EmbeddingTable(domain, params.dim);
  for (std::size_t v = 0; v < V; ++v)
    result.table.add(vocab[v], std::span<const double>(in.data() + v * d, d));
  return result;
}

inline SkipgramResult train_skipgram(const DomainCorpus& corpus, const SkipgramParams& params) {
  return train_skipgram(training_texts(corpus), corpus.name(), params);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return (aa == 0 || bb == 0) ? 0.0 : ab / std::sqrt(aa * bb);
}

/// word2vec text format: "<vocab_size> <dim>" then "<token> <floats...>".
inline void save_word2vec(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.tokens()[i];
    for (double x : table.row(i)) out << ' ' << format_double(x);
    out << '\n';
  }
}

inline EmbeddingTable load_word2vec(const std::filesystem::path& path, const std::string& domain) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::size_t n = 0;
  int dim = 0;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  {
    std::istringstream hs(line);
    if (!(hs >> n >> dim)) throw ValidationError(path.string() + ": bad header");
  }
  EmbeddingTable table(domain, dim);
  std::vector<double> vec(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": truncated file");
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    for (auto& x : vec) {
      std::string num;
      ls >> num;
      auto v = detail::parse_number(num);
      if (!v) throw ValidationError(path.string() + ":" + std::to_string(i + 2) + ": bad float");
      x = *v;
    }
    table.add(tok, vec);
  }
  return table;
}

enum class SentenceMode { mean_pooled, file_loaded };

/// Key of a precomputed sentence vector: "<domain>/<split>/<index>/<a|b>".
inline std::string sentence_key(const std::string& domain, Split split, std::size_t index, char side) {
  return domain + "/" + std::string(split_name(split)) + "/" + std::to_string(index) + "/" + side;
}

class SentenceEmbeddingProvider {
 public:
  static SentenceEmbeddingProvider mean_pooled(EmbeddingTable table) {
    SentenceEmbeddingProvider p;
    p.mode_ = SentenceMode::mean_pooled;
    p.dim_ = table.dim();
    p.table_ = std::move(table);
    return p;
  }

  /// JSONL records {"key": "...", "vec": [...]}.
  static SentenceEmbeddingProvider file_loaded(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open sentence vectors " + path.string());
    SentenceEmbeddingProvider p;
    p.mode_ = SentenceMode::file_loaded;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const std::string where = path.string() + ":" + std::to_string(lineno);
      try {
        auto rec = nlohmann::json::parse(line);
        auto key = rec.at("key").get<std::string>();
        auto vec = rec.at("vec").get<std::vector<double>>();
        if (p.dim_ == 0) p.dim_ = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != p.dim_ || vec.empty())
          throw ValidationError(where + ": vector length " + std::to_string(vec.size()) + " differs from " +
                                std::to_string(p.dim_));
        p.stored_[key] = std::move(vec);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": " + e.what());
      }
    }
    if (p.stored_.empty()) throw ValidationError(path.string() + ": no sentence vectors");
    return p;
  }

  SentenceMode mode() const { return mode_; }
  int dim() const { return dim_; }

  /// mean_pooled: `text` is tokenized and its known word vectors averaged
  /// (zero vector if none). file_loaded: `text` is the record key.
  std::vector<double> embed(std::string_view text) const {
    if (mode_ == SentenceMode::file_loaded) return lookup(std::string(text));
    return pool(tokenize(text));
  }

  std::vector<double> pool(const std::vector<std::string>& tokens) const {
    if (mode_ != SentenceMode::mean_pooled) throw ValidationError("pool() requires a mean_pooled provider");
    // Summing in sorted token order makes the result exactly order-invariant.
    std::vector<std::string> sorted = tokens;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
    std::size_t hits = 0;
    for (const auto& tok : sorted) {
      if (auto v = table_.find(tok)) {
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += (*v)[k];
        ++hits;
      }
    }
    if (hits > 0)
      for (auto& x : acc) x /= static_cast<double>(hits);
    return acc;
  }

  std::vector<double> lookup(const std::string& key) const {
    auto it = stored_.find(key);
    if (it == stored_.end()) throw ValidationError("no stored sentence vector for key '" + key + "'");
    return it->second;
  }

 private:
  SentenceMode mode_ = SentenceMode::mean_pooled;
  int dim_ = 0;
  EmbeddingTable table_;
  std::unordered_map<std::string, std::vector<double>> stored_;
};

inline std::vector<double> embed_sentence(const SentenceEmbeddingProvider& provider, std::string_view text) {
  return provider.embed(text);
}

}  // namespace domsel
