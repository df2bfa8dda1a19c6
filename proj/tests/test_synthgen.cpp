#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "kbqa/corpus.hpp"
#include "kbqa/errors.hpp"
#include "kbqa/synthgen.hpp"
#include "kbqa/weights.hpp"
#include "test_support.hpp"

namespace kbqa {
namespace {

using synth::AnswerLabel;

std::vector<const corpus::QABag*> all_bags(const synth::GeneratedCorpus& c) {
  std::vector<const corpus::QABag*> v;
  for (const auto& b : c.train) v.push_back(&b);
  for (const auto& b : c.test) v.push_back(&b);
  return v;
}

bool contains_span(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<long>(i))) return true;
  }
  return false;
}

// True object(s) of a bag: the KB objects of its (subject, predicate),
// recovered from the question text independently of grounding.
std::vector<std::string> true_objects(const corpus::QABag& b, const corpus::KnowledgeBase& kb) {
  std::vector<std::string> out;
  for (int id : b.facts) {
    const auto& t = kb.at(id);
    // predicates are stored with underscores; questions use spaces
    std::string spaced = t.predicate;
    std::replace(spaced.begin(), spaced.end(), '_', ' ');
    if (contains_span(b.question.tokens, corpus::tokenize(spaced).tokens)) out.push_back(t.object);
  }
  return out;
}

TEST(Synthgen, NoiseFreeAnswersContainTrueObject) {
  synth::GenConfig cfg;
  cfg.seed = 3;
  cfg.num_bags = 400;
  cfg.p_irrelevant = 0.0;
  cfg.p_inconsistent = 0.0;
  auto c = synth::generate(cfg);
  std::size_t checked = 0;
  for (const auto* b : all_bags(c)) {
    auto truth = true_objects(*b, c.kb);
    ASSERT_FALSE(truth.empty()) << b->bag_id;
    for (const auto& a : b->answers) {
      bool any = false;
      for (const auto& o : truth) any = any || contains_span(a.tokens, corpus::tokenize(o).tokens);
      EXPECT_TRUE(any) << "bag " << b->bag_id << ": " << corpus::join_tokens(a.tokens);
      ++checked;
    }
  }
  EXPECT_GT(checked, 400u);
}

TEST(Synthgen, SameSeedSameBytes) {
  synth::GenConfig cfg;
  cfg.seed = 7;
  cfg.num_bags = 300;
  auto d1 = testing::temp_dir("synth-a");
  auto d2 = testing::temp_dir("synth-b");
  synth::write_corpus(d1, synth::generate(cfg), cfg);
  synth::write_corpus(d2, synth::generate(cfg), cfg);
  for (const char* f : {"kb.tsv", "train.jsonl", "test.jsonl", "provenance.jsonl", "gen_config.json"}) {
    auto a = testing::read_file(d1 / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, testing::read_file(d2 / f)) << f;
  }
  cfg.seed = 8;
  auto d3 = testing::temp_dir("synth-c");
  synth::write_corpus(d3, synth::generate(cfg), cfg);
  EXPECT_NE(testing::read_file(d1 / "train.jsonl"), testing::read_file(d3 / "train.jsonl"));
}

TEST(Synthgen, WrittenCorpusLoadsBack) {
  synth::GenConfig cfg;
  cfg.num_bags = 200;
  auto c = synth::generate(cfg);
  auto d = testing::temp_dir("synth-load");
  synth::write_corpus(d, c, cfg);
  auto kb = corpus::load_kb(d / "kb.tsv");
  auto train = corpus::load_bags(d / "train.jsonl", kb);
  ASSERT_EQ(train.size(), c.train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(train[i].bag_id, c.train[i].bag_id);
    ASSERT_EQ(train[i].answers.size(), c.train[i].answers.size());
    for (std::size_t j = 0; j < train[i].answers.size(); ++j) EXPECT_EQ(train[i].answers[j], c.train[i].answers[j]);
  }
  auto prov = synth::load_provenance(d / "provenance.jsonl");
  EXPECT_EQ(prov, c.provenance);
}

struct Large : ::testing::Test {
  static synth::GeneratedCorpus& corpus() {
    static synth::GeneratedCorpus c = [] {
      synth::GenConfig cfg;
      cfg.seed = 11;
      cfg.num_bags = 10000;
      return synth::generate(cfg);
    }();
    return c;
  }
};

TEST_F(Large, MeanAnswersPerBag) {
  const auto& c = corpus();
  std::size_t answers = 0, bags = 0;
  for (const auto* b : all_bags(c)) {
    answers += b->answers.size();
    ++bags;
  }
  ASSERT_EQ(bags, 10000u);
  EXPECT_NEAR(static_cast<double>(answers) / static_cast<double>(bags), 3.2, 0.1);
}

TEST_F(Large, LabelRatesWithinThreeSigma) {
  const auto& c = corpus();
  // Default relations in order; the first three draw stock replies at
  // 0.3 * 1.6, the last three at 0.3 * 0.4.
  const std::vector<std::pair<std::string, double>> rates = {
      {"nickname", 0.48}, {"birth place", 0.48}, {"occupation", 0.48},
      {"favorite color", 0.12}, {"home town", 0.12}, {"pet", 0.12}};
  // Single-answer bags draw noise at 0.2x; larger bags at (1 - 0.2 s) / (1 - s)
  // with s = exp(-2.2) / 3.2 the share of answers in single-answer bags.
  const double share = std::exp(-2.2) / 3.2;
  const double multi = (1 - 0.2 * share) / (1 - share);
  // Cells keyed by (relation, single?), each a binomial with known rate.
  struct Cell {
    double n = 0, irr = 0, inc = 0;
  };
  std::map<std::pair<std::size_t, bool>, Cell> cells;
  double n = 0, irr = 0, inc = 0;
  for (const auto* b : all_bags(c)) {
    std::string q;
    for (const auto& t : b->question.tokens) q += " " + t;
    std::size_t k = rates.size();
    for (std::size_t i = 0; i < rates.size(); ++i)
      if (q.find(" " + rates[i].first) != std::string::npos) k = i;
    ASSERT_LT(k, rates.size()) << q;
    auto& cell = cells[{k, b->answers.size() == 1}];
    for (auto l : c.provenance.at(b->bag_id)) {
      cell.n += 1;
      cell.irr += l == AnswerLabel::kIrrelevant;
      cell.inc += l == AnswerLabel::kInconsistent;
      n += 1;
      irr += l == AnswerLabel::kIrrelevant;
      inc += l == AnswerLabel::kInconsistent;
    }
  }
  const auto within = [](double count, double trials, double p) {
    return std::abs(count - trials * p) <= 3.0 * std::sqrt(trials * p * (1 - p));
  };
  for (const auto& [key, cell] : cells) {
    const double f = key.second ? 0.2 : multi;
    EXPECT_TRUE(within(cell.irr, cell.n, rates[key.first].second * f)) << rates[key.first].first << " " << key.second;
    EXPECT_TRUE(within(cell.inc, cell.n, 0.15 * f)) << rates[key.first].first << " " << key.second;
  }
  // Corpus-wide fractions converge to the configured rates.
  EXPECT_TRUE(within(irr, n, 0.3)) << irr / n;
  EXPECT_TRUE(within(inc, n, 0.15)) << inc / n;
}

TEST(Synthgen, NoiseFactorKeepsExpectedRate) {
  synth::GenConfig cfg;
  for (double mean : {1.5, 3.2, 6.0}) {
    for (double scale : {0.0, 0.2, 1.0}) {
      cfg.answers_per_bag_mean = mean;
      cfg.single_noise_scale = scale;
      // Answer-weighted mean multiplier under m = 1 + Poisson(mean - 1).
      const double lambda = mean - 1;
      double pk = std::exp(-lambda), num = 0.0, den = 0.0;
      for (int k = 0; k < 200; ++k) {
        const int m = k + 1;
        num += pk * m * synth::noise_factor(cfg, m);
        den += pk * m;
        pk *= lambda / (k + 1);
      }
      EXPECT_NEAR(num / den, 1.0, 1e-12) << mean << " " << scale;
      EXPECT_DOUBLE_EQ(synth::noise_factor(cfg, 1), scale);
      EXPECT_EQ(synth::noise_factor(cfg, 2), synth::noise_factor(cfg, 9));
    }
  }
  cfg.answers_per_bag_mean = 1.0;
  EXPECT_EQ(synth::noise_factor(cfg, 1), 1.0);
}

TEST(Synthgen, IrrelevantRatePerPredicate) {
  synth::GenConfig cfg;
  cfg.predicates = {"a", "b", "c", "d", "e"};
  cfg.p_irrelevant = 0.25;
  cfg.irrelevant_skew = 0.4;
  EXPECT_DOUBLE_EQ(synth::irrelevant_rate(cfg, 0), 0.35);
  EXPECT_DOUBLE_EQ(synth::irrelevant_rate(cfg, 1), 0.35);
  EXPECT_DOUBLE_EQ(synth::irrelevant_rate(cfg, 2), 0.25);
  EXPECT_DOUBLE_EQ(synth::irrelevant_rate(cfg, 3), 0.15);
  EXPECT_DOUBLE_EQ(synth::irrelevant_rate(cfg, 4), 0.15);
  cfg.predicates = {"a"};
  EXPECT_DOUBLE_EQ(synth::irrelevant_rate(cfg, 0), 0.25);
}

TEST_F(Large, GroundingMatchesLabels) {
  const auto& c = corpus();
  for (const auto* b : all_bags(c)) {
    const auto& labels = c.provenance.at(b->bag_id);
    ASSERT_EQ(labels.size(), b->answers.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& a = b->answers[i];
      std::size_t grounded = 0;
      for (const auto& m : a.mentions) {
        ASSERT_TRUE(m.triple_id.has_value());
        EXPECT_NE(std::find(b->facts.begin(), b->facts.end(), *m.triple_id), b->facts.end());
        ++grounded;
      }
      if (labels[i] == AnswerLabel::kIrrelevant) {
        EXPECT_EQ(grounded, 0u) << b->bag_id;
      } else {
        EXPECT_GE(grounded, 1u) << b->bag_id;
      }
    }
  }
}

TEST_F(Large, IrrelevantAnswersGetZeroKbWeight) {
  const auto& c = corpus();
  std::size_t seen = 0;
  for (const auto* b : all_bags(c)) {
    const auto& labels = c.provenance.at(b->bag_id);
    auto w = loss::kb_weights(*b, loss::ZeroFallback::kDropBag);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == AnswerLabel::kIrrelevant) {
        EXPECT_EQ(w.weights[i], 0.0);
        ++seen;
      }
    }
  }
  EXPECT_GT(seen, 1000u);
}

TEST_F(Large, MultiValueFactsAreInBagFacts) {
  const auto& c = corpus();
  std::size_t multi = 0;
  for (const auto* b : all_bags(c)) {
    auto truth = true_objects(*b, c.kb);
    if (truth.size() < 2) continue;
    ++multi;
    for (const auto& o : truth) {
      bool found = false;
      for (int id : b->facts) found = found || c.kb.at(id).object == o;
      EXPECT_TRUE(found);
    }
  }
  EXPECT_GT(multi, 0u);
}

TEST_F(Large, SplitSizesAndSubjectOverlap) {
  const auto& c = corpus();
  EXPECT_EQ(c.train.size(), 8000u);
  EXPECT_EQ(c.test.size(), 2000u);
  auto subject_of = [&](const corpus::QABag& b) { return c.kb.at(b.facts.front()).subject; };
  std::set<std::string> train_subjects, test_subjects;
  for (const auto& b : c.train) train_subjects.insert(subject_of(b));
  for (const auto& b : c.test) test_subjects.insert(subject_of(b));
  std::size_t unseen = 0;
  for (const auto& s : test_subjects) unseen += train_subjects.count(s) == 0;
  EXPECT_GE(2 * unseen, test_subjects.size());
}

TEST(Synthgen, InfeasibleConfigs) {
  synth::GenConfig cfg;
  cfg.num_entities = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(synth::generate(cfg), ConfigError);
  cfg = {};
  cfg.p_irrelevant = 0.9;
  cfg.p_inconsistent = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.p_irrelevant = 0.5;
  cfg.p_inconsistent = 0.3;  // 0.5 * 1.6 + 0.3 > 1
  cfg.single_noise_scale = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.irrelevant_skew = 0.4;
  EXPECT_NO_THROW(cfg.validate());
  cfg.single_noise_scale = 0.0;  // larger bags then exceed 1
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.single_noise_scale = -0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.single_noise_scale = 1.0;
  cfg.irrelevant_skew = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.p_irrelevant = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.predicates.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.values_per_predicate = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.p_inconsistent = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.p_multi_value = 0.0;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Synthgen, TemplateInventories) {
  EXPECT_GE(synth::question_templates().size(), 4u);
  EXPECT_GE(synth::answer_templates().size(), 5u);
  for (const auto& t : synth::answer_templates()) EXPECT_NE(t.find("{o}"), std::string::npos) << t;
  for (const auto& t : synth::question_templates()) {
    EXPECT_NE(t.find("{s}"), std::string::npos) << t;
    EXPECT_EQ(t.find("{o}"), std::string::npos) << t;
  }
}

}  // namespace
}  // namespace kbqa
