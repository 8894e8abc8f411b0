#pragma once

// Labeled text-pair corpora: ingestion, tokenization, statistics and splits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include <json.hpp>

#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

/// Lowercases, NFC-normalizes and splits on maximal runs of non-alphanumeric
/// code points. Never yields empty tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  if (text.empty()) return tokens;
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw ComputationError("ICU NFC normalizer unavailable");
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  s = nfc->normalize(s, status);
  s.toLower(icu::Locale::getRoot());
  s = nfc->normalize(s, status);
  if (U_FAILURE(status)) throw ComputationError("ICU normalization failed");

  icu::UnicodeString current;
  auto flush = [&] {
    if (current.isEmpty()) return;
    std::string out;
    current.toUTF8String(out);
    tokens.push_back(std::move(out));
    current.remove();
  };
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isalnum(c))
      current.append(c);
    else
      flush();
  }
  flush();
  return tokens;
}

enum class Split : std::uint8_t { train, val, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

struct TextPairExample {
  std::string text_a;
  std::string text_b;
  int label = 0;
  std::vector<std::string> tokens_a;
  std::vector<std::string> tokens_b;

  /// Tokenizes both texts; throws ValidationError if either is empty afterwards.
  static TextPairExample make(std::string a, std::string b, int label) {
    if (label != 0 && label != 1) throw ValidationError("label must be 0 or 1");
    TextPairExample ex{std::move(a), std::move(b), label, {}, {}};
    ex.tokens_a = tokenize(ex.text_a);
    ex.tokens_b = tokenize(ex.text_b);
    if (ex.tokens_a.empty() || ex.tokens_b.empty())
      throw ValidationError("text is empty after tokenization");
    return ex;
  }
};

/// Identifiers end up in file names and embedding keys.
inline bool valid_identifier(std::string_view name) {
  if (name.empty() || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-' || c == '.';
  });
}

class DomainCorpus {
 public:
  DomainCorpus() = default;
  DomainCorpus(std::string name, std::vector<TextPairExample> examples, std::vector<Split> splits = {})
      : name_(std::move(name)), examples_(std::move(examples)), splits_(std::move(splits)) {
    if (!valid_identifier(name_)) throw ValidationError("invalid domain name '" + name_ + "'");
    if (!splits_.empty() && splits_.size() != examples_.size())
      throw ValidationError("split assignment does not cover every example of " + name_);
  }

  const std::string& name() const { return name_; }
  const std::vector<TextPairExample>& examples() const { return examples_; }
  const std::vector<Split>& splits() const { return splits_; }
  bool has_splits() const { return !splits_.empty(); }
  std::size_t size() const { return examples_.size(); }

  /// Example indices in the given split (all indices when no filter).
  std::vector<std::size_t> indices(std::optional<Split> filter = std::nullopt) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < examples_.size(); ++i) {
      if (filter) {
        if (splits_.empty()) throw ValidationError("domain " + name_ + " has no split assignment");
        if (splits_[i] != *filter) continue;
      }
      out.push_back(i);
    }
    return out;
  }

  /// A corpus with only the examples of one split (split tags kept).
  DomainCorpus subset(Split s) const {
    std::vector<TextPairExample> ex;
    std::vector<Split> sp;
    for (std::size_t i : indices(s)) {
      ex.push_back(examples_[i]);
      sp.push_back(s);
    }
    return DomainCorpus(name_, std::move(ex), std::move(sp));
  }

 private:
  std::string name_;
  std::vector<TextPairExample> examples_;
  std::vector<Split> splits_;
};

enum class CorpusFormat { jsonl, tsv };

inline CorpusFormat parse_format(std::string_view s) {
  if (s == "jsonl") return CorpusFormat::jsonl;
  if (s == "tsv") return CorpusFormat::tsv;
  throw ValidationError("unknown corpus format '" + std::string(s) + "' (expected jsonl or tsv)");
}

struct LoadResult {
  DomainCorpus corpus;
  std::size_t rejected = 0;  // records whose text was empty after tokenization
};

namespace detail {

inline int resolve_label(std::optional<double> label, std::optional<double> score,
                         std::optional<double> threshold, const std::string& where) {
  if (threshold) {
    if (!score) throw ValidationError(where + ": binarization requested but record has no numeric score");
    return *score < *threshold ? 0 : 1;
  }
  if (!label) throw ValidationError(where + ": record has no label (pass a binarize threshold for scored data)");
  if (*label != 0.0 && *label != 1.0) throw ValidationError(where + ": label must be 0 or 1");
  return static_cast<int>(*label);
}

inline std::optional<double> parse_number(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Reads a labeled pair corpus. With `binarize_threshold` t, records carry a
/// `score` and get label 0 when score < t, else 1. Record order is preserved.
inline LoadResult load_domain(const std::filesystem::path& path, CorpusFormat format, const std::string& name,
                              std::optional<double> binarize_threshold = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file " + path.string());
  std::vector<TextPairExample> examples;
  std::size_t rejected = 0;
  std::string line;
  std::size_t lineno = 0;

  auto add = [&](std::string a, std::string b, int label) {
    auto ta = tokenize(a);
    auto tb = tokenize(b);
    if (ta.empty() || tb.empty()) {
      ++rejected;
      return;
    }
    examples.push_back(TextPairExample{std::move(a), std::move(b), label, std::move(ta), std::move(tb)});
  };

  if (format == CorpusFormat::jsonl) {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const std::string where = path.string() + ":" + std::to_string(lineno);
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(where + ": malformed JSON line (" + e.what() + ")");
      }
      if (!rec.is_object() || !rec.contains("text_a") || !rec.contains("text_b") || !rec["text_a"].is_string() ||
          !rec["text_b"].is_string())
        throw ValidationError(where + ": record needs string fields text_a and text_b");
      std::optional<double> label, score;
      if (rec.contains("label")) {
        if (!rec["label"].is_number()) throw ValidationError(where + ": label must be numeric");
        label = rec["label"].get<double>();
      }
      if (rec.contains("score")) {
        if (!rec["score"].is_number()) throw ValidationError(where + ": score must be numeric");
        score = rec["score"].get<double>();
      }
      add(rec["text_a"].get<std::string>(), rec["text_b"].get<std::string>(),
          detail::resolve_label(label, score, binarize_threshold, where));
    }
  } else {
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty TSV file (header expected)");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_tabs(line);
    int col_a = -1, col_b = -1, col_label = -1, col_score = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const int c = static_cast<int>(i);
      if (header[i] == "text_a") col_a = c;
      else if (header[i] == "text_b") col_b = c;
      else if (header[i] == "label") col_label = c;
      else if (header[i] == "score") col_score = c;
      else throw ValidationError(path.string() + ":1: unknown TSV column '" + std::string(header[i]) + "'");
    }
    if (col_a < 0 || col_b < 0 || (col_label < 0 && col_score < 0))
      throw ValidationError(path.string() + ":1: header must be text_a<TAB>text_b<TAB>label (or score)");
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::string where = path.string() + ":" + std::to_string(lineno);
      const auto fields = detail::split_tabs(line);
      if (fields.size() != header.size())
        throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
      std::optional<double> label, score;
      if (col_label >= 0) {
        label = detail::parse_number(fields[static_cast<std::size_t>(col_label)]);
        if (!label) throw ValidationError(where + ": label is not a number");
      }
      if (col_score >= 0) {
        score = detail::parse_number(fields[static_cast<std::size_t>(col_score)]);
        if (!score) throw ValidationError(where + ": score is not a number");
      }
      add(std::string(fields[static_cast<std::size_t>(col_a)]), std::string(fields[static_cast<std::size_t>(col_b)]),
          detail::resolve_label(label, score, binarize_threshold, where));
    }
  }
  return LoadResult{DomainCorpus(name, std::move(examples)), rejected};
}

struct UnigramStats {
  std::map<std::string, std::int64_t> counts;
  std::int64_t total_tokens = 0;
  std::int64_t example_count = 0;
  double avg_tokens_per_example = 0.0;  // tokens per text: total / (2 * examples)

  std::size_t vocabulary_size() const { return counts.size(); }
  bool contains(const std::string& token) const { return counts.count(token) != 0; }
};

inline UnigramStats unigram_stats(const DomainCorpus& corpus, std::optional<Split> filter = std::nullopt) {
  UnigramStats st;
  for (std::size_t i : corpus.indices(filter)) {
    const auto& ex = corpus.examples()[i];
    for (const auto& t : ex.tokens_a) ++st.counts[t];
    for (const auto& t : ex.tokens_b) ++st.counts[t];
    st.total_tokens += static_cast<std::int64_t>(ex.tokens_a.size() + ex.tokens_b.size());
    ++st.example_count;
  }
  if (st.example_count == 0)
    throw ValidationError("unigram_stats: domain " + corpus.name() + " has no examples under the filter");
  st.avg_tokens_per_example = static_cast<double>(st.total_tokens) / (2.0 * static_cast<double>(st.example_count));
  return st;
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Stratified, seeded train/val/test assignment. Each label group is shuffled
/// and the groups are interleaved by relative rank, so every prefix of the
/// interleaving holds both labels in proportion. Split sizes are the rounded
/// cumulative ratios of the total.
inline DomainCorpus split(const DomainCorpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
    throw ValidationError("split ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");

  std::vector<std::size_t> groups[2];
  for (std::size_t i = 0; i < corpus.size(); ++i)
    groups[corpus.examples()[i].label].push_back(i);
  for (int l = 0; l < 2; ++l)
    if (groups[l].size() < 3)
      throw ValidationError("split: domain " + corpus.name() + " has fewer than 3 examples with label " +
                            std::to_string(l));

  Rng rng(seed);
  struct Keyed {
    double key;
    int label;
    std::size_t index;
  };
  std::vector<Keyed> order;
  order.reserve(corpus.size());
  for (int l = 0; l < 2; ++l) {
    shuffle(groups[l], rng);
    const double n = static_cast<double>(groups[l].size());
    for (std::size_t r = 0; r < groups[l].size(); ++r)
      order.push_back({(static_cast<double>(r) + 0.5) / n, l, groups[l][r]});
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.label < b.label;
  });

  const double total = static_cast<double>(corpus.size());
  const auto n_train = static_cast<std::size_t>(std::llround(total * ratios.train));
  const auto n_trainval = static_cast<std::size_t>(std::llround(total * (ratios.train + ratios.val)));
  std::vector<Split> assignment(corpus.size(), Split::test);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    assignment[order[pos].index] = pos < n_train ? Split::train : (pos < n_trainval ? Split::val : Split::test);
  }
  std::vector<TextPairExample> examples = corpus.examples();
  return DomainCorpus(corpus.name(), std::move(examples), std::move(assignment));
}

/// Workspace form: JSONL with text_a, text_b, label and (if assigned) split.
inline void save_corpus(const DomainCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& ex = corpus.examples()[i];
    nlohmann::ordered_json rec;
    rec["text_a"] = ex.text_a;
    rec["text_b"] = ex.text_b;
    rec["label"] = ex.label;
    if (corpus.has_splits()) rec["split"] = std::string(split_name(corpus.splits()[i]));
    out << rec.dump() << '\n';
  }
}

inline DomainCorpus load_corpus(const std::filesystem::path& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<TextPairExample> examples;
  std::vector<Split> splits;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      examples.push_back(TextPairExample::make(rec.at("text_a").get<std::string>(),
                                               rec.at("text_b").get<std::string>(), rec.at("label").get<int>()));
      if (rec.contains("split")) splits.push_back(parse_split(rec["split"].get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!splits.empty() && splits.size() != examples.size())
    throw ValidationError(path.string() + ": split field present on some records only");
  return DomainCorpus(name, std::move(examples), std::move(splits));
}

}  // namespace domsel
