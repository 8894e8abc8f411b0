#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "domsel/embed.hpp"
#include "test_support.hpp"

using namespace domsel;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

std::vector<std::vector<std::string>> cooccurrence_texts() {
  // x and y always share a text; z only appears with w and v.
  std::vector<std::vector<std::string>> texts;
  std::mt19937 rng(1);
  const std::vector<std::string> fill_a = {"p", "q", "r"}, fill_b = {"s", "t", "u"};
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> a = {"x", "y", fill_a[rng() % 3], fill_a[rng() % 3]};
    std::vector<std::string> b = {"z", "w", "v", fill_b[rng() % 3]};
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    texts.push_back(a);
    texts.push_back(b);
  }
  return texts;
}

SkipgramParams small(int dim = 16, std::uint64_t seed = 3) {
  SkipgramParams p;
  p.dim = dim;
  p.seed = seed;
  return p;
}

}  // namespace

TEST(Skipgram, CooccurringTokensAreCloser) {
  const auto res = train_skipgram(cooccurrence_texts(), "d", small());
  const auto x = *res.table.find("x"), y = *res.table.find("y"), z = *res.table.find("z");
  EXPECT_GT(cosine(x, y), cosine(x, z));
}

TEST(Skipgram, ShapeAndFiniteness) {
  const auto res = train_skipgram(cooccurrence_texts(), "d", small(8));
  EXPECT_EQ(res.table.dim(), 8);
  EXPECT_EQ(res.table.size(), 11u);
  for (std::size_t i = 0; i < res.table.size(); ++i) {
    ASSERT_EQ(res.table.row(i).size(), 8u);
    for (double v : res.table.row(i)) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Skipgram, SameSeedSameTable) {
  const auto a = train_skipgram(cooccurrence_texts(), "d", small(16, 9));
  const auto b = train_skipgram(cooccurrence_texts(), "d", small(16, 9));
  const auto c = train_skipgram(cooccurrence_texts(), "d", small(16, 10));
  EXPECT_TRUE(a.table == b.table);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_FALSE(a.table == c.table);
}

TEST(Skipgram, LossDecreases) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto res = train_skipgram(cooccurrence_texts(), "d", small(16, seed));
    ASSERT_EQ(res.epoch_loss.size(), 6u);
    EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
  }
  // Random text over a larger vocabulary, just above 100 tokens.
  std::mt19937 rng(5);
  std::vector<std::vector<std::string>> texts;
  for (int i = 0; i < 13; ++i) {
    std::vector<std::string> t;
    for (int k = 0; k < 8; ++k) t.push_back("w" + std::to_string(rng() % 20));
    texts.push_back(t);
  }
  const auto res = train_skipgram(texts, "d", small());
  EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
}

TEST(Skipgram, TooSmallVocabulary) {
  EXPECT_THROW(train_skipgram({{"a", "a", "a"}}, "d", small()), ValidationError);
  EXPECT_THROW(train_skipgram({}, "d", small()), ValidationError);
  EXPECT_NO_THROW(train_skipgram({{"a", "b"}}, "d", small()));
}

TEST(Skipgram, SharedTokensStartAlike) {
  // One epoch with zero step: the table is the initialization.
  SkipgramParams p = small();
  p.epochs = 1;
  p.alpha_start = p.alpha_end = 0.0;
  const auto a = train_skipgram({{"shared", "only_a"}}, "a", p);
  const auto b = train_skipgram({{"shared", "only_b", "more"}}, "b", p);
  const auto va = *a.table.find("shared"), vb = *b.table.find("shared");
  EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
}

TEST(EmbeddingTable, RejectsBadRows) {
  EmbeddingTable t("d", 2);
  const double ok[] = {1.0, 2.0};
  const double nan[] = {1.0, std::numeric_limits<double>::quiet_NaN()};
  const double inf[] = {std::numeric_limits<double>::infinity(), 0.0};
  const double three[] = {1.0, 2.0, 3.0};
  t.add("a", ok);
  EXPECT_THROW(t.add("a", ok), ValidationError);
  EXPECT_THROW(t.add("b", nan), ComputationError);
  EXPECT_THROW(t.add("c", inf), ComputationError);
  EXPECT_THROW(t.add("d", three), ValidationError);
  EXPECT_FALSE(t.contains("b"));
}

TEST(Word2vecFormat, RoundTripIsExact) {
  TempDir dir("embed");
  const auto res = train_skipgram(cooccurrence_texts(), "d", small(5));
  save_word2vec(res.table, dir / "v.w2v");
  const auto back = load_word2vec(dir / "v.w2v", "d");
  EXPECT_TRUE(back == res.table);
  const auto text = testing_support::read_file(dir / "v.w2v");
  EXPECT_EQ(text.substr(0, text.find('\n')), "11 5");
}

TEST(Word2vecFormat, Malformed) {
  TempDir dir("embed");
  write_file(dir / "a.w2v", "2 2\nx 1 2\n");
  EXPECT_THROW(load_word2vec(dir / "a.w2v", "d"), ValidationError);
  write_file(dir / "b.w2v", "1 2\nx 1\n");
  EXPECT_THROW(load_word2vec(dir / "b.w2v", "d"), ValidationError);
  write_file(dir / "c.w2v", "1 2\nx 1 nope\n");
  EXPECT_THROW(load_word2vec(dir / "c.w2v", "d"), ValidationError);
}

namespace {
SentenceEmbeddingProvider toy_provider() {
  EmbeddingTable t("d", 3);
  const double a[] = {1.0, 2.0, 3.0}, b[] = {-1.0, 0.5, 0.25}, c[] = {0.1, 0.2, 0.3};
  t.add("a", a);
  t.add("b", b);
  t.add("c", c);
  return SentenceEmbeddingProvider::mean_pooled(std::move(t));
}
}  // namespace

TEST(SentenceEmbedding, MeanOfIdenticalVectors) {
  const auto p = toy_provider();
  EXPECT_EQ(embed_sentence(p, "a a"), (std::vector<double>{1.0, 2.0, 3.0}));
  EXPECT_EQ(embed_sentence(p, "A, b"), (std::vector<double>{0.0, 1.25, 1.625}));
  EXPECT_EQ(embed_sentence(p, "a zzz"), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(SentenceEmbedding, AllOovIsZero) {
  const auto p = toy_provider();
  EXPECT_EQ(embed_sentence(p, "nothing known here"), (std::vector<double>{0.0, 0.0, 0.0}));
  EXPECT_EQ(embed_sentence(p, ""), (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(SentenceEmbedding, PermutationInvariantExactly) {
  const auto res = train_skipgram(cooccurrence_texts(), "d", small());
  const auto p = SentenceEmbeddingProvider::mean_pooled(res.table);
  std::mt19937 rng(2);
  std::vector<std::string> toks = {"x", "y", "z", "p", "q", "r", "s", "t", "u", "x", "v"};
  const auto ref = p.pool(toks);
  for (int i = 0; i < 50; ++i) {
    std::shuffle(toks.begin(), toks.end(), rng);
    EXPECT_EQ(p.pool(toks), ref);
  }
}

TEST(SentenceEmbedding, FileLoaded) {
  TempDir dir("embed");
  write_file(dir / "v.jsonl",
             "{\"key\": \"d/train/0/a\", \"vec\": [0.1, 0.2]}\n{\"key\": \"d/train/0/b\", \"vec\": [1e-3, -4]}\n");
  const auto p = SentenceEmbeddingProvider::file_loaded(dir / "v.jsonl");
  EXPECT_EQ(p.dim(), 2);
  EXPECT_EQ(embed_sentence(p, "d/train/0/b"), (std::vector<double>{1e-3, -4.0}));
  EXPECT_EQ(embed_sentence(p, sentence_key("d", Split::train, 0, 'a')), (std::vector<double>{0.1, 0.2}));
  try {
    embed_sentence(p, "d/test/7/a");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("d/test/7/a"), std::string::npos);
  }
  write_file(dir / "bad.jsonl", "{\"key\": \"k1\", \"vec\": [1, 2]}\n{\"key\": \"k2\", \"vec\": [1]}\n");
  EXPECT_THROW(SentenceEmbeddingProvider::file_loaded(dir / "bad.jsonl"), ValidationError);
}
