#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kbqa/evalmetrics.hpp"
#include "test_support.hpp"

namespace kbqa {
namespace {

using eval::Tokens;

Tokens toks(const std::string& s) { return corpus::tokenize(s).tokens; }

// Exhaustive LCS: the longest subsequence of `a` that is also a
// subsequence of `b`, found by enumerating every subset of positions.
std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  const std::size_t n = a.size();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    const auto len = static_cast<std::size_t>(std::popcount(mask));
    if (len <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1u)) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else ++j;
    }
    if (ok) best = len;
  }
  return best;
}

TEST(EntityAccuracy, Examples) {
  std::vector<std::string> gold{"A-man", "Mengde"};
  EXPECT_TRUE(eval::entity_hit(toks("his nickname is A-man"), gold));
  EXPECT_FALSE(eval::entity_hit(Tokens{}, gold));
  EXPECT_FALSE(eval::entity_hit(toks("his nickname is Xuande"), gold));
  EXPECT_FALSE(eval::entity_hit(toks("A man"), gold));
  std::vector<std::string> multi{"Cao Cao"};
  EXPECT_TRUE(eval::entity_hit(toks("it is Cao Cao"), multi));
  EXPECT_FALSE(eval::entity_hit(toks("Cao is Cao"), multi));
}

TEST(EntityAccuracy, GoldObjectsOfBag) {
  auto kb = testing::caocao_kb();
  auto bag = testing::fig2_bag(kb);
  EXPECT_EQ(eval::gold_objects(bag), (std::vector<std::string>{"A-man", "Mengde"}));
}

TEST(EntityAccuracy, MonotoneUnderAppending) {
  std::vector<std::string> gold{"A-man", "Mengde"};
  std::mt19937_64 rng(4);
  const std::vector<std::string> pool{"A-man", "Mengde", "x", "y", "is", "Xuande"};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int trial = 0; trial < 500; ++trial) {
    Tokens p;
    for (int i = 0; i < 4; ++i) p.push_back(pool[pick(rng)]);
    bool hit = eval::entity_hit(p, gold);
    for (int k = 0; k < 4; ++k) {
      p.push_back(pool[pick(rng)]);
      const bool now = eval::entity_hit(p, gold);
      if (hit) EXPECT_TRUE(now);
      hit = now;
    }
  }
}

TEST(Bleu, Examples) {
  std::vector<Tokens> preds{toks("a b c")};
  std::vector<std::vector<Tokens>> refs{{toks("a b d")}};
  EXPECT_NEAR(eval::bleu2(preds, refs), std::sqrt(1.0 / 3.0), 1e-4);
  EXPECT_NEAR(eval::bleu2(preds, refs), 0.5774, 1e-4);
  std::vector<Tokens> same{toks("a b c"), toks("x y")};
  std::vector<std::vector<Tokens>> same_refs{{toks("a b c")}, {toks("x y")}};
  EXPECT_DOUBLE_EQ(eval::bleu2(same, same_refs), 1.0);
  std::vector<Tokens> none{toks("p q r")};
  EXPECT_EQ(eval::bleu2(none, refs), 0.0);
}

TEST(Bleu, ClippingAndBrevity) {
  // "the the the" vs "the cat": p1 = 1/3 clipped, p2 = 0.
  auto s = eval::bleu_stats(toks("the the the"), std::vector<Tokens>{toks("the cat")});
  EXPECT_EQ(s.match1, 1u);
  EXPECT_EQ(s.total1, 3u);
  EXPECT_EQ(s.match2, 0u);
  // Short prediction: BP = exp(1 - r/c) with r = 4, c = 2.
  std::vector<Tokens> preds{toks("a b")};
  std::vector<std::vector<Tokens>> refs{{toks("a b c d")}};
  EXPECT_NEAR(eval::bleu2(preds, refs), std::exp(1.0 - 4.0 / 2.0), 1e-12);
  // Closest reference length, the shorter one on ties.
  auto t = eval::bleu_stats(toks("a b c"), std::vector<Tokens>{toks("a b c d"), toks("a b")});
  EXPECT_EQ(t.ref_length, 2u);
  // Multi-reference clipping takes the max count over references.
  auto m = eval::bleu_stats(toks("a a"), std::vector<Tokens>{toks("a b"), toks("a a c")});
  EXPECT_EQ(m.match1, 2u);
}

TEST(Rouge, Examples) {
  EXPECT_DOUBLE_EQ(eval::rouge_l_f1(toks("a b c"), toks("a b c")), 1.0);
  EXPECT_EQ(eval::rouge_l_f1(toks("a b"), toks("c d")), 0.0);
  EXPECT_EQ(eval::lcs_length(toks("a b c d"), toks("a c d")), 3u);
  EXPECT_NEAR(eval::rouge_l_f1(toks("a b c d"), toks("a c d")), 6.0 / 7.0, 1e-4);
  EXPECT_NEAR(eval::rouge_l_f1(toks("a b c d"), toks("a c d")), 2 * 0.75 * 1.0 / 1.75, 1e-15);
  std::vector<Tokens> refs{toks("x y z"), toks("a c d")};
  EXPECT_NEAR(eval::rouge_l(toks("a b c d"), refs), 6.0 / 7.0, 1e-15);
  EXPECT_EQ(eval::rouge_l_f1(Tokens{}, toks("a")), 0.0);
}

TEST(Rouge, DynamicProgramMatchesEnumeration) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> alpha{"a", "b", "c", "d"};
  std::uniform_int_distribution<std::size_t> len(0, 8), sym(0, alpha.size() - 1);
  for (int trial = 0; trial < 3000; ++trial) {
    Tokens a, b;
    for (auto n = len(rng); n > 0; --n) a.push_back(alpha[sym(rng)]);
    for (auto n = len(rng); n > 0; --n) b.push_back(alpha[sym(rng)]);
    ASSERT_EQ(eval::lcs_length(a, b), brute_lcs(a, b));
    ASSERT_EQ(eval::lcs_length(b, a), brute_lcs(a, b));
  }
}

struct ReportTest : ::testing::Test {
  corpus::KnowledgeBase kb = testing::caocao_kb();
  std::vector<corpus::QABag> bags = testing::small_bags(kb);
  std::vector<Tokens> preds{toks("it is A-man"), toks("Qiao"), toks("no idea"), toks("Mengde of course")};
};

TEST_F(ReportTest, AggregatesAndRanges) {
  bags.push_back(testing::make_bag(kb, 11, "how are you", {"fine thanks"}, {0}));
  preds.push_back(toks("fine"));
  auto r = eval::evaluate(preds, bags);
  EXPECT_EQ(r.questions, 5u);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.accuracy_questions, 4u);
  EXPECT_DOUBLE_EQ(r.accuracy, 3.0 / 4.0);
  for (double v : {r.accuracy, r.bleu2, r.rougeL}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_FALSE(r.per_question[4].hit.has_value());
  auto copy = r;
  eval::aggregate(copy);
  EXPECT_EQ(copy.accuracy, r.accuracy);
  EXPECT_EQ(copy.bleu2, r.bleu2);
  EXPECT_EQ(copy.rougeL, r.rougeL);
  double rs = 0.0;
  for (const auto& q : r.per_question) rs += q.rouge;
  EXPECT_NEAR(r.rougeL, rs / 5.0, 1e-15);
}

TEST_F(ReportTest, PermutationInvariant) {
  auto base = eval::evaluate(preds, bags);
  std::vector<std::size_t> order{0, 1, 2, 3};
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tokens> p;
    std::vector<corpus::QABag> b;
    for (auto i : order) {
      p.push_back(preds[i]);
      b.push_back(bags[i]);
    }
    auto r = eval::evaluate(p, b);
    EXPECT_EQ(r.accuracy, base.accuracy);
    EXPECT_EQ(r.bleu2, base.bleu2);
    EXPECT_NEAR(r.rougeL, base.rougeL, 1e-15);
  }
}

TEST_F(ReportTest, AtomicValuesAreResplit) {
  std::vector<Tokens> p{Tokens{"Cao Cao"}};
  std::vector<corpus::QABag> b{testing::make_bag(kb, 1, "who", {"Cao Cao"}, {0})};
  auto r = eval::evaluate(p, b);
  EXPECT_EQ(r.per_question[0].prediction, toks("Cao Cao"));
  EXPECT_DOUBLE_EQ(r.per_question[0].rouge, 1.0);
}

TEST_F(ReportTest, BootstrapIsSeededAndBracketsEstimate) {
  auto r = eval::evaluate(preds, bags);
  eval::bootstrap(r, 1000, 5);
  ASSERT_TRUE(r.accuracy_ci && r.bleu2_ci && r.rougeL_ci);
  EXPECT_LE(r.accuracy_ci->lo, r.accuracy);
  EXPECT_GE(r.accuracy_ci->hi, r.accuracy);
  EXPECT_LE(r.rougeL_ci->lo, r.rougeL_ci->hi);
  auto again = eval::evaluate(preds, bags);
  eval::bootstrap(again, 1000, 5);
  EXPECT_EQ(again.accuracy_ci->lo, r.accuracy_ci->lo);
  EXPECT_EQ(again.bleu2_ci->hi, r.bleu2_ci->hi);
  auto json = eval::report_json(r);
  EXPECT_NE(json.find("\"accuracy\""), std::string::npos);
  EXPECT_NE(eval::report_table(r).find("ROUGE-L"), std::string::npos);
}

}  // namespace
}  // namespace kbqa
