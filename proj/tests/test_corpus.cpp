#include <gtest/gtest.h>

#include <random>
#include <set>

#include "domsel/corpus.hpp"
#include "test_support.hpp"

using namespace domsel;
using testing_support::make_corpus;
using testing_support::TempDir;
using testing_support::write_file;
using Tokens = std::vector<std::string>;

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Hello, World!"), (Tokens{"hello", "world"}));
  EXPECT_EQ(tokenize("a  b"), (Tokens{"a", "b"}));
  EXPECT_EQ(tokenize("C++11 rocks"), (Tokens{"c", "11", "rocks"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize(" ,;!? ").empty());
}

TEST(Tokenize, UnicodeLowercaseAndNfc) {
  EXPECT_EQ(tokenize("\xC3\x91" "AND\xC3\x9A Stra\xC3\x9F" "e"), (Tokens{"\xC3\xB1" "and\xC3\xBA", "stra\xC3\x9F" "e"}));
  // "e" + combining acute composes to U+00E9.
  EXPECT_EQ(tokenize("Cafe\xCC\x81"), (Tokens{"caf\xC3\xA9"}));
  EXPECT_EQ(tokenize("caf\xC3\xA9"), tokenize("CAFE\xCC\x81"));
}

TEST(Tokenize, IdempotentOnJoinedOutput) {
  const std::string alphabet = "aZ9 ,.-_!?\t\n\xC3\xA9";
  std::mt19937 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    const int len = static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) {
      const std::size_t k = rng() % (alphabet.size() - 1);
      if (alphabet[k] == '\xC3') {
        s += "\xC3\xA9";
      } else if (alphabet[k] != '\xA9') {
        s += alphabet[k];
      }
    }
    const auto once = tokenize(s);
    std::string joined;
    for (std::size_t i = 0; i < once.size(); ++i) joined += (i ? " " : "") + once[i];
    EXPECT_EQ(tokenize(joined), once) << s;
    for (const auto& t : once) EXPECT_FALSE(t.empty());
  }
}

TEST(LoadDomain, BinarizesScoresAtThreshold) {
  TempDir dir("corpus");
  write_file(dir / "d.jsonl",
             "{\"text_a\": \"a b\", \"text_b\": \"c\", \"score\": 3.9}\n"
             "{\"text_a\": \"a b\", \"text_b\": \"c\", \"score\": 4.0}\n"
             "{\"text_a\": \"a b\", \"text_b\": \"c\", \"score\": 4.7}\n");
  const auto r = load_domain(dir / "d.jsonl", CorpusFormat::jsonl, "sick", 4.0);
  ASSERT_EQ(r.corpus.size(), 3u);
  EXPECT_EQ(r.corpus.examples()[0].label, 0);
  EXPECT_EQ(r.corpus.examples()[1].label, 1);
  EXPECT_EQ(r.corpus.examples()[2].label, 1);
  EXPECT_EQ(r.rejected, 0u);
}

TEST(LoadDomain, LabelsPassThroughAndOrderIsKept) {
  TempDir dir("corpus");
  write_file(dir / "d.jsonl",
             "{\"text_a\": \"first\", \"text_b\": \"x\", \"label\": 1}\n"
             "\n"
             "{\"text_a\": \"second\", \"text_b\": \"y\", \"label\": 0}\n");
  const auto r = load_domain(dir / "d.jsonl", CorpusFormat::jsonl, "d");
  ASSERT_EQ(r.corpus.size(), 2u);
  EXPECT_EQ(r.corpus.examples()[0].text_a, "first");
  EXPECT_EQ(r.corpus.examples()[0].label, 1);
  EXPECT_EQ(r.corpus.examples()[1].label, 0);
}

TEST(LoadDomain, MalformedLineNamesLineNumber) {
  TempDir dir("corpus");
  write_file(dir / "d.jsonl", "{\"text_a\": \"a\", \"text_b\": \"b\", \"label\": 1}\n{not json\n");
  try {
    load_domain(dir / "d.jsonl", CorpusFormat::jsonl, "d");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("d.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(LoadDomain, EmptyTextsAreRejectedAndCounted) {
  TempDir dir("corpus");
  write_file(dir / "d.jsonl",
             "{\"text_a\": \"!!!\", \"text_b\": \"b\", \"label\": 1}\n"
             "{\"text_a\": \"a\", \"text_b\": \"\", \"label\": 1}\n"
             "{\"text_a\": \"a\", \"text_b\": \"b\", \"label\": 0}\n");
  const auto r = load_domain(dir / "d.jsonl", CorpusFormat::jsonl, "d");
  EXPECT_EQ(r.corpus.size(), 1u);
  EXPECT_EQ(r.rejected, 2u);
}

TEST(LoadDomain, ValidationErrors) {
  TempDir dir("corpus");
  write_file(dir / "score.jsonl", "{\"text_a\": \"a\", \"text_b\": \"b\", \"score\": 2}\n");
  EXPECT_THROW(load_domain(dir / "score.jsonl", CorpusFormat::jsonl, "d"), ValidationError);
  write_file(dir / "label.jsonl", "{\"text_a\": \"a\", \"text_b\": \"b\", \"label\": 1}\n");
  EXPECT_THROW(load_domain(dir / "label.jsonl", CorpusFormat::jsonl, "d", 4.0), ValidationError);
  write_file(dir / "bad.jsonl", "{\"text_a\": \"a\", \"text_b\": \"b\", \"label\": 2}\n");
  EXPECT_THROW(load_domain(dir / "bad.jsonl", CorpusFormat::jsonl, "d"), ValidationError);
  EXPECT_THROW(load_domain(dir / "missing.jsonl", CorpusFormat::jsonl, "d"), ValidationError);
  EXPECT_THROW(load_domain(dir / "label.jsonl", CorpusFormat::jsonl, "bad name"), ValidationError);
}

TEST(LoadDomain, Tsv) {
  TempDir dir("corpus");
  write_file(dir / "d.tsv", "text_a\ttext_b\tlabel\nhello there\tgeneral kenobi\t1\nx\ty\t0\n");
  const auto r = load_domain(dir / "d.tsv", CorpusFormat::tsv, "d");
  ASSERT_EQ(r.corpus.size(), 2u);
  EXPECT_EQ(r.corpus.examples()[0].tokens_b, (Tokens{"general", "kenobi"}));
  EXPECT_EQ(r.corpus.examples()[1].label, 0);

  write_file(dir / "s.tsv", "text_a\ttext_b\tscore\na\tb\t3.99\na\tb\t4\n");
  const auto s = load_domain(dir / "s.tsv", CorpusFormat::tsv, "s", 4.0);
  EXPECT_EQ(s.corpus.examples()[0].label, 0);
  EXPECT_EQ(s.corpus.examples()[1].label, 1);

  write_file(dir / "short.tsv", "text_a\ttext_b\tlabel\na\tb\n");
  try {
    load_domain(dir / "short.tsv", CorpusFormat::tsv, "d");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("short.tsv:2"), std::string::npos);
  }
}

TEST(UnigramStats, HandCount) {
  const auto c = make_corpus("d", {{"a b", "b c", 1}});
  const auto s = unigram_stats(c);
  EXPECT_EQ(s.counts, (std::map<std::string, std::int64_t>{{"a", 1}, {"b", 2}, {"c", 1}}));
  EXPECT_EQ(s.total_tokens, 4);
  EXPECT_EQ(s.example_count, 1);
  EXPECT_DOUBLE_EQ(s.avg_tokens_per_example, 2.0);
}

TEST(UnigramStats, DoubledCorpusDoublesCounts) {
  const auto once = unigram_stats(make_corpus("d", {{"a b", "b c", 1}}));
  const auto twice = unigram_stats(make_corpus("d", {{"a b", "b c", 1}, {"a b", "b c", 1}}));
  for (const auto& [t, c] : once.counts) EXPECT_EQ(twice.counts.at(t), 2 * c);
  EXPECT_EQ(twice.total_tokens, 2 * once.total_tokens);
  EXPECT_DOUBLE_EQ(twice.avg_tokens_per_example, once.avg_tokens_per_example);
}

TEST(UnigramStats, AdditiveOverDisjointCorpora) {
  const std::vector<std::string> vocab = {"p", "q", "r", "s", "t"};
  const auto a = testing_support::random_corpus("a", 20, vocab, 1);
  const auto b = testing_support::random_corpus("b", 30, vocab, 2);
  auto ex = a.examples();
  ex.insert(ex.end(), b.examples().begin(), b.examples().end());
  const auto u = unigram_stats(DomainCorpus("u", ex));
  const auto sa = unigram_stats(a), sb = unigram_stats(b);
  for (const auto& [t, c] : u.counts)
    EXPECT_EQ(c, (sa.counts.count(t) ? sa.counts.at(t) : 0) + (sb.counts.count(t) ? sb.counts.at(t) : 0));
  std::int64_t sum = 0;
  for (const auto& [t, c] : u.counts) sum += c;
  EXPECT_EQ(sum, u.total_tokens);
}

TEST(UnigramStats, EmptyFilterIsAnError) {
  const auto c = make_corpus("d", {{"a", "b", 1}});
  EXPECT_THROW(unigram_stats(c, Split::train), ValidationError);
  const DomainCorpus tagged("d", c.examples(), {Split::val});
  EXPECT_THROW(unigram_stats(tagged, Split::train), ValidationError);
  EXPECT_EQ(unigram_stats(tagged, Split::val).total_tokens, 2);
}

namespace {
DomainCorpus balanced(std::size_t n) {
  std::vector<std::tuple<std::string, std::string, int>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.emplace_back("t" + std::to_string(i), "u", static_cast<int>(i % 2));
  return make_corpus("d", rows);
}

std::map<std::pair<Split, int>, int> tally(const DomainCorpus& c) {
  std::map<std::pair<Split, int>, int> t;
  for (std::size_t i = 0; i < c.size(); ++i) ++t[{c.splits()[i], c.examples()[i].label}];
  return t;
}
}  // namespace

TEST(Split, BalancedHundredIsExact) {
  const auto s = split(balanced(100), {0.8, 0.1, 0.1}, 7);
  auto t = tally(s);
  for (int l = 0; l < 2; ++l) {
    EXPECT_EQ((t[{Split::train, l}]), 40);
    EXPECT_EQ((t[{Split::val, l}]), 5);
    EXPECT_EQ((t[{Split::test, l}]), 5);
  }
}

TEST(Split, ProportionsWithinOneExample) {
  for (std::size_t n : {17u, 53u, 101u, 240u}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      // Unbalanced labels: every third example positive.
      std::vector<std::tuple<std::string, std::string, int>> rows;
      for (std::size_t i = 0; i < n; ++i) rows.emplace_back("x", "y", i % 3 == 0 ? 1 : 0);
      const auto s = split(make_corpus("d", rows), {0.8, 0.1, 0.1}, seed);
      std::map<Split, int> per;
      for (auto sp : s.splits()) ++per[sp];
      EXPECT_LE(std::abs(per[Split::train] - 0.8 * n), 1.0);
      EXPECT_LE(std::abs(per[Split::val] - 0.1 * n), 1.0);
      EXPECT_LE(std::abs(per[Split::test] - 0.1 * n), 1.0);
      auto t = tally(s);
      for (int l = 0; l < 2; ++l) {
        const double nl = static_cast<double>(t[{Split::train, l}] + t[{Split::val, l}] + t[{Split::test, l}]);
        EXPECT_LE(std::abs(t[{Split::train, l}] - 0.8 * nl), 1.0) << n << " " << seed;
      }
    }
  }
}

TEST(Split, DeterministicAndSeedSensitive) {
  const auto c = balanced(60);
  const auto a = split(c, {0.8, 0.1, 0.1}, 11);
  const auto b = split(c, {0.8, 0.1, 0.1}, 11);
  const auto d = split(c, {0.8, 0.1, 0.1}, 12);
  EXPECT_EQ(a.splits(), b.splits());
  EXPECT_NE(a.splits(), d.splits());
}

TEST(Split, Preconditions) {
  EXPECT_THROW(split(balanced(100), {0.5, 0.5, 0.1}, 1), ValidationError);
  EXPECT_THROW(split(balanced(100), {1.0, 0.0, 0.0}, 1), ValidationError);
  EXPECT_THROW(split(balanced(5), {0.8, 0.1, 0.1}, 1), ValidationError);
  EXPECT_NO_THROW(split(balanced(6), {0.8, 0.1, 0.1}, 1));
}

TEST(Corpus, SaveLoadRoundTrip) {
  TempDir dir("corpus");
  const auto s = split(balanced(20), {0.8, 0.1, 0.1}, 4);
  save_corpus(s, dir / "c.jsonl");
  const auto r = load_corpus(dir / "c.jsonl", "d");
  ASSERT_EQ(r.size(), s.size());
  EXPECT_EQ(r.splits(), s.splits());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(r.examples()[i].text_a, s.examples()[i].text_a);
    EXPECT_EQ(r.examples()[i].label, s.examples()[i].label);
  }
  EXPECT_EQ(r.subset(Split::val).size(), 2u);
}
