#pragma once

// Interpolated Kneser-Ney trigram language model.
//
// Order 3 uses raw counts, order 2 uses continuation counts N1+(. v w), order 1
// uses bigram-type continuation counts N1+(. w), and below that a uniform floor
// over the predictable vocabulary (everything except <s>). A single absolute
// discount D is applied at every order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "domsel/corpus.hpp"
#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";

class TrigramLM {
 public:
  using Trigram = std::array<std::string, 3>;
  static constexpr std::uint32_t unk_id = 0;
  static constexpr std::uint32_t bos_id = 1;
  static constexpr std::uint32_t eos_id = 2;

  /// Builds a model from raw trigram counts. `words` are the regular vocabulary
  /// entries (specials are added implicitly); every token in `trigrams` must be
  /// a word or a special.
  TrigramLM(std::vector<std::string> words, const std::map<Trigram, std::int64_t>& trigrams, double discount,
            int min_count = 1)
      : discount_(discount), min_count_(min_count) {
    if (!(discount > 0.0 && discount < 1.0)) throw ValidationError("KN discount must lie in (0, 1)");
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    vocab_ = {kUnk, kBos, kEos};
    for (auto& w : words) {
      if (w == kUnk || w == kBos || w == kEos) continue;
      vocab_.push_back(std::move(w));
    }
    for (std::uint32_t i = 0; i < vocab_.size(); ++i) ids_.emplace(vocab_[i], i);
    if (vocab_.size() >= (1u << 21)) throw ValidationError("vocabulary too large for trigram key packing");

    for (const auto& [tri, c] : trigrams) {
      if (c <= 0) continue;
      std::array<std::uint32_t, 3> id{};
      for (int k = 0; k < 3; ++k) {
        auto it = ids_.find(tri[static_cast<std::size_t>(k)]);
        if (it == ids_.end()) throw ValidationError("trigram token '" + tri[static_cast<std::size_t>(k)] + "' not in vocabulary");
        id[static_cast<std::size_t>(k)] = it->second;
      }
      if (id[2] == bos_id) throw ValidationError("<s> cannot be predicted");
      c3_[pack(id[0], id[1], id[2])] += c;
    }
    if (c3_.empty()) throw ValidationError("language model has no trigram counts");
    derive();
  }

  double discount() const { return discount_; }
  int min_count() const { return min_count_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  std::size_t vocabulary_size() const { return vocab_.size(); }

  std::uint32_t id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_id : it->second;
  }

  /// p(w | u, v). Zero only for w = <s>.
  double prob(std::uint32_t u, std::uint32_t v, std::uint32_t w) const {
    if (w == bos_id) return 0.0;
    const double D = discount_;
    const double predictable = static_cast<double>(vocab_.size() - 1);

    double p1;
    if (total1_ > 0) {
      const double n1 = static_cast<double>(lookup(n1cont_, w));
      p1 = (std::max(n1 - D, 0.0) + D * static_cast<double>(types1_) / predictable) / static_cast<double>(total1_);
    } else {
      p1 = 1.0 / predictable;
    }

    double p2 = p1;
    if (auto it = ctx2_.find(v); it != ctx2_.end() && it->second.total > 0) {
      const double n2 = static_cast<double>(lookup(n2cont_, pack(0, v, w)));
      p2 = (std::max(n2 - D, 0.0) + D * static_cast<double>(it->second.types) * p1) /
           static_cast<double>(it->second.total);
    }

    double p3 = p2;
    if (auto it = ctx3_.find(pack(0, u, v)); it != ctx3_.end() && it->second.total > 0) {
      const double c = static_cast<double>(lookup(c3_, pack(u, v, w)));
      p3 = (std::max(c - D, 0.0) + D * static_cast<double>(it->second.types) * p2) /
           static_cast<double>(it->second.total);
    }
    return p3;
  }

  double prob(const std::string& u, const std::string& v, const std::string& w) const {
    return prob(id_of(u), id_of(v), id_of(w));
  }

  /// Raw trigram counts keyed by token strings, sorted.
  std::map<Trigram, std::int64_t> trigram_counts() const {
    std::map<Trigram, std::int64_t> out;
    for (const auto& [key, c] : c3_) {
      out.emplace(Trigram{vocab_[key >> 42], vocab_[(key >> 21) & mask], vocab_[key & mask]}, c);
    }
    return out;
  }

 private:
  static constexpr std::uint64_t mask = (1ULL << 21) - 1;
  static std::uint64_t pack(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return (a << 42) | (b << 21) | c; }
  template <typename Map, typename Key>
  static std::int64_t lookup(const Map& m, const Key& k) {
    auto it = m.find(k);
    return it == m.end() ? 0 : it->second;
  }

  struct Context {
    std::int64_t total = 0;
    std::int64_t types = 0;
  };

  void derive() {
    for (const auto& [key, c] : c3_) {
      const std::uint64_t uv = key >> 21;  // (u, v) packed in the low bits
      auto& ctx = ctx3_[pack(0, uv >> 21, uv & mask)];
      ctx.total += c;
      ctx.types += 1;
      n2cont_[pack(0, (key >> 21) & mask, key & mask)] += 1;
    }
    for (const auto& [vw, n] : n2cont_) {
      const auto v = static_cast<std::uint32_t>(vw >> 21);
      const auto w = static_cast<std::uint32_t>(vw & mask);
      auto& ctx = ctx2_[v];
      ctx.total += n;
      ctx.types += 1;
      n1cont_[w] += 1;
    }
    for (const auto& [w, n] : n1cont_) {
      total1_ += n;
      types1_ += 1;
    }
  }

  double discount_;
  int min_count_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::unordered_map<std::uint64_t, std::int64_t> c3_;
  std::unordered_map<std::uint64_t, Context> ctx3_;
  std::unordered_map<std::uint64_t, std::int64_t> n2cont_;
  std::unordered_map<std::uint32_t, Context> ctx2_;
  std::unordered_map<std::uint32_t, std::int64_t> n1cont_;
  std::int64_t total1_ = 0;
  std::int64_t types1_ = 0;
};

namespace detail {

inline std::vector<const std::vector<std::string>*> lm_texts(const DomainCorpus& corpus, std::optional<Split> filter) {
  std::vector<const std::vector<std::string>*> texts;
  for (std::size_t i : corpus.indices(filter)) {
    texts.push_back(&corpus.examples()[i].tokens_a);
    texts.push_back(&corpus.examples()[i].tokens_b);
  }
  return texts;
}

}  // namespace detail

/// Trains on the train split (or every example when the corpus is unsplit).
/// Tokens seen fewer than `min_count` times become <unk>.
inline TrigramLM train_kn(const DomainCorpus& corpus, int min_count = 1, double discount = 0.75) {
  const std::optional<Split> filter = corpus.has_splits() ? std::optional<Split>(Split::train) : std::nullopt;
  const auto texts = detail::lm_texts(corpus, filter);
  if (texts.empty()) throw ValidationError("train_kn: no training text in domain " + corpus.name());

  std::map<std::string, std::int64_t> unigrams;
  for (const auto* t : texts)
    for (const auto& tok : *t) ++unigrams[tok];
  std::vector<std::string> words;
  for (const auto& [tok, c] : unigrams)
    if (c >= min_count) words.push_back(tok);
  auto map_token = [&](const std::string& tok) -> const std::string& {
    static const std::string unk = kUnk;
    auto it = unigrams.find(tok);
    return (it != unigrams.end() && it->second >= min_count) ? tok : unk;
  };

  std::map<TrigramLM::Trigram, std::int64_t> trigrams;
  for (const auto* t : texts) {
    std::string u = kBos, v = kBos;
    for (const auto& tok : *t) {
      const std::string& w = map_token(tok);
      ++trigrams[{u, v, w}];
      u = std::move(v);
      v = w;
    }
    ++trigrams[{u, v, kEos}];
  }
  return TrigramLM(std::move(words), trigrams, discount, min_count);
}

/// 2^(-mean log2 p) over every token plus the closing </s> of each text.
/// Unknown tokens are scored as <unk>.
inline double perplexity(const TrigramLM& lm, const DomainCorpus& corpus, std::optional<Split> filter = std::nullopt) {
  const auto texts = detail::lm_texts(corpus, filter);
  if (texts.empty()) throw ValidationError("perplexity: no evaluation text in domain " + corpus.name());
  double log_sum = 0.0;
  std::int64_t n = 0;
  for (const auto* t : texts) {
    std::uint32_t u = TrigramLM::bos_id, v = TrigramLM::bos_id;
    for (const auto& tok : *t) {
      const std::uint32_t w = lm.id_of(tok);
      log_sum += std::log2(lm.prob(u, v, w));
      ++n;
      u = v;
      v = w;
    }
    log_sum += std::log2(lm.prob(u, v, TrigramLM::eos_id));
    ++n;
  }
  return std::exp2(-log_sum / static_cast<double>(n));
}

/// Plain-text count file:
///   kn-trigram D=<discount> vocab=<size>
///   min_count <n>
///   word <token>          (regular vocabulary, sorted)
///   3 <u> <v> <w> <count> (sorted)
inline void save_lm(const TrigramLM& lm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "kn-trigram D=" << format_double(lm.discount()) << " vocab=" << lm.vocabulary_size() << '\n';
  out << "min_count " << lm.min_count() << '\n';
  for (std::size_t i = 3; i < lm.vocabulary().size(); ++i) out << "word " << lm.vocabulary()[i] << '\n';
  for (const auto& [tri, c] : lm.trigram_counts())
    out << "3 " << tri[0] << ' ' << tri[1] << ' ' << tri[2] << ' ' << c << '\n';
}

inline TrigramLM load_lm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("kn-trigram D=", 0) != 0)
    throw ValidationError(path.string() + ": missing kn-trigram header");
  double discount = 0;
  std::size_t vocab_size = 0;
  {
    std::istringstream hs(line.substr(std::string("kn-trigram ").size()));
    std::string d, v;
    hs >> d >> v;
    if (d.rfind("D=", 0) != 0 || v.rfind("vocab=", 0) != 0) throw ValidationError(path.string() + ": bad header");
    auto dv = detail::parse_number(d.substr(2));
    if (!dv) throw ValidationError(path.string() + ": bad discount");
    discount = *dv;
    vocab_size = std::stoul(v.substr(6));
  }
  int min_count = 1;
  std::vector<std::string> words;
  std::map<TrigramLM::Trigram, std::int64_t> trigrams;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "min_count") {
      ls >> min_count;
    } else if (kind == "word") {
      std::string w;
      ls >> w;
      words.push_back(w);
    } else if (kind == "3") {
      TrigramLM::Trigram t;
      std::int64_t c = 0;
      ls >> t[0] >> t[1] >> t[2] >> c;
      if (!ls) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad trigram line");
      trigrams[t] = c;
    } else if (!kind.empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
  }
  TrigramLM lm(std::move(words), trigrams, discount, min_count);
  if (lm.vocabulary_size() != vocab_size) throw ValidationError(path.string() + ": vocabulary size mismatch");
  return lm;
}

}  // namespace domsel
