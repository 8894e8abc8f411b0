#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "domsel/ngram_lm.hpp"
#include "reference_kn.hpp"
#include "test_support.hpp"

using namespace domsel;
using testing_support::make_corpus;
using testing_support::random_corpus;
using testing_support::TempDir;

namespace {

std::vector<std::vector<std::string>> texts_of(const DomainCorpus& c) {
  std::vector<std::vector<std::string>> out;
  for (const auto& e : c.examples()) {
    out.push_back(e.tokens_a);
    out.push_back(e.tokens_b);
  }
  return out;
}

}  // namespace

TEST(KneserNey, HandEvaluatedSingleText) {
  // Padded text: <s> <s> a a a </s>.
  const std::map<TrigramLM::Trigram, std::int64_t> tri = {
      {{"<s>", "<s>", "a"}, 1}, {{"<s>", "a", "a"}, 1}, {{"a", "a", "a"}, 1}, {{"a", "a", "</s>"}, 1}};
  const TrigramLM lm({"a"}, tri, 0.75);
  EXPECT_EQ(lm.vocabulary(), (std::vector<std::string>{"<unk>", "<s>", "</s>", "a"}));
  // p1(a) = (2 - D + D*2/3)/3, p2(a|<s>) = (1 - D) + D*p1(a), p3 = (1 - D) + D*p2.
  EXPECT_DOUBLE_EQ(lm.prob("<s>", "<s>", "a"), 49.0 / 64.0);
  EXPECT_DOUBLE_EQ(lm.prob("<s>", "<s>", "<unk>"), 3.0 / 32.0);
  EXPECT_GT(lm.prob("<s>", "<s>", "a"), lm.prob("<s>", "<s>", "<unk>"));
  EXPECT_EQ(lm.prob("<s>", "<s>", "<s>"), 0.0);
}

TEST(KneserNey, HandEvaluatedPairCorpus) {
  // Both texts "a a a": raw trigram counts double, continuation counts do not.
  const auto lm = train_kn(make_corpus("d", {{"a a a", "A, a; a", 1}}));
  EXPECT_DOUBLE_EQ(lm.prob("<s>", "<s>", "a"), (2 - 0.75 + 0.75 * 0.6875) / 2);
  EXPECT_DOUBLE_EQ(lm.prob("<s>", "<s>", "<unk>"), 0.75 * 0.125 / 2);
}

TEST(KneserNey, MatchesReferenceOnEveryTriple) {
  const std::vector<std::string> vocab = {"x", "y", "z", "w", "v"};
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto c = random_corpus("d", 12, vocab, seed, 4);
    const auto lm = train_kn(c);
    const testing_support::ReferenceKN ref(texts_of(c), 0.75);
    for (const auto& u : lm.vocabulary())
      for (const auto& v : lm.vocabulary())
        for (const auto& w : lm.vocabulary())
          EXPECT_NEAR(lm.prob(u, v, w), ref.p3(u, v, w), 1e-12) << u << " " << v << " " << w;
  }
}

TEST(KneserNey, NormalizedForEveryHistory) {
  std::vector<std::string> vocab;
  for (int i = 0; i < 45; ++i) vocab.push_back("w" + std::to_string(i));
  const auto c = random_corpus("d", 80, vocab, 9, 7);
  const auto lm = train_kn(c);
  ASSERT_LE(lm.vocabulary_size(), 50u);
  for (const auto& u : lm.vocabulary())
    for (const auto& v : lm.vocabulary()) {
      double s = 0;
      for (const auto& w : lm.vocabulary()) s += lm.prob(u, v, w);
      EXPECT_NEAR(s, 1.0, 1e-6) << u << " " << v;
    }
}

TEST(KneserNey, UnseenTrigramHasPositiveProbability) {
  const auto lm = train_kn(make_corpus("d", {{"a b c", "c b a", 1}}));
  EXPECT_GT(lm.prob("c", "a", "b"), 0.0);
  EXPECT_GT(lm.prob("zzz", "yyy", "xxx"), 0.0);  // all <unk>
}

TEST(KneserNey, MinCountMapsRareTokensToUnk) {
  const auto lm = train_kn(make_corpus("d", {{"a a b", "a c", 1}}), 2);
  EXPECT_EQ(lm.vocabulary(), (std::vector<std::string>{"<unk>", "<s>", "</s>", "a"}));
  EXPECT_EQ(lm.id_of("b"), TrigramLM::unk_id);
}

TEST(KneserNey, DiscountBounds) {
  const auto c = make_corpus("d", {{"a", "b", 1}});
  EXPECT_THROW(train_kn(c, 1, 0.0), ValidationError);
  EXPECT_THROW(train_kn(c, 1, 1.0), ValidationError);
}

TEST(Perplexity, OwnCorpusBeatsDisjointVocabulary) {
  const auto train = random_corpus("s", 60, {"a", "b", "c", "d", "e", "f"}, 5);
  const auto other = random_corpus("t", 60, {"p", "q", "r", "s", "t", "u"}, 6);
  const auto lm = train_kn(train);
  const double own = perplexity(lm, train), far = perplexity(lm, other);
  EXPECT_LT(own, far);
  EXPECT_TRUE(std::isfinite(far));
  EXPECT_GE(own, 1.0);
}

TEST(Perplexity, SingleTokenLanguageIsNearlyDeterministic) {
  std::vector<std::tuple<std::string, std::string, int>> rows(50, {"a a a a a a", "a a a a a a", 1});
  const auto c = make_corpus("d", rows);
  EXPECT_LE(perplexity(train_kn(c), c), 2.0);
}

TEST(Perplexity, InvariantUnderDuplication) {
  const auto train = random_corpus("s", 30, {"a", "b", "c", "d"}, 2);
  const auto eval = random_corpus("e", 10, {"a", "b", "c", "x"}, 3);
  auto ex = eval.examples();
  ex.insert(ex.end(), eval.examples().begin(), eval.examples().end());
  const auto lm = train_kn(train);
  EXPECT_NEAR(perplexity(lm, eval), perplexity(lm, DomainCorpus("e", ex)), 1e-12);
}

TEST(Perplexity, UniformCountsBoundedByVocabulary) {
  // Every history continues with every word or </s> exactly once.
  const std::vector<std::string> words = {"a", "b", "c", "d"};
  std::vector<std::string> left = {"<s>"}, right = {"</s>"};
  left.insert(left.end(), words.begin(), words.end());
  right.insert(right.end(), words.begin(), words.end());
  std::map<TrigramLM::Trigram, std::int64_t> tri;
  for (const auto& u : left)
    for (const auto& v : left)
      for (const auto& w : right)
        if (!(v == "<s>" && u != "<s>")) tri[{u, v, w}] = 1;
  const TrigramLM lm(words, tri, 0.75);
  const auto eval = random_corpus("e", 20, words, 4);
  const double ppl = perplexity(lm, eval);
  EXPECT_GE(ppl, 1.0);
  EXPECT_LE(ppl, static_cast<double>(lm.vocabulary_size()));
}

TEST(Perplexity, AllUnknownEvaluationIsFinite) {
  const auto lm = train_kn(random_corpus("s", 10, {"a", "b"}, 1));
  const auto eval = make_corpus("e", {{"q r s", "t u", 1}});
  EXPECT_TRUE(std::isfinite(perplexity(lm, eval)));
}

TEST(Persistence, ReloadReproducesPerplexityBitIdentically) {
  TempDir dir("lm");
  const auto train = random_corpus("s", 40, {"a", "b", "c", "d", "e"}, 8);
  const auto eval = random_corpus("e", 15, {"a", "b", "c", "z"}, 9);
  const auto lm = train_kn(train, 1, 0.6);
  save_lm(lm, dir / "m.kn");
  const auto back = load_lm(dir / "m.kn");
  EXPECT_EQ(perplexity(lm, eval), perplexity(back, eval));
  EXPECT_EQ(back.discount(), 0.6);
  const auto text = testing_support::read_file(dir / "m.kn");
  EXPECT_EQ(text.rfind("kn-trigram D=0.6 vocab=" + std::to_string(lm.vocabulary_size()) + "\n", 0), 0u) << text.substr(0, 40);
  save_lm(back, dir / "again.kn");
  EXPECT_EQ(testing_support::read_file(dir / "again.kn"), text);
}
