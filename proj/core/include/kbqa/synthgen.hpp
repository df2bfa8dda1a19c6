#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kbqa/corpus.hpp"

namespace kbqa::synth {

enum class AnswerLabel { kCorrect, kInconsistent, kIrrelevant };

const char* to_string(AnswerLabel label);
AnswerLabel label_from_string(const std::string& s);

struct GenConfig {
  std::uint64_t seed = 1;
  int num_entities = 300;
  std::vector<std::string> predicates = {"nickname", "birth_place", "occupation",
                                         "favorite_color", "home_town", "pet"};
  int values_per_predicate = 24;
  int num_bags = 2500;
  double answers_per_bag_mean = 3.2;
  double p_irrelevant = 0.3;
  double p_inconsistent = 0.15;
  /// Relations differ in how often they draw stock replies: the first half
  /// of `predicates` uses p_irrelevant * (1 + skew), the second half
  /// p_irrelevant * (1 - skew), an odd middle one p_irrelevant itself.
  double irrelevant_skew = 0.6;
  /// Single-answer bags are less ambiguous: their answers draw irrelevant
  /// and inconsistent labels at this multiple of the rates. Answers of
  /// larger bags are scaled up so the corpus-wide expected rates stay
  /// p_irrelevant and p_inconsistent.
  double single_noise_scale = 0.2;
  double p_multi_value = 0.15;
  int vocab_noise_tokens = 40;
  double train_fraction = 0.8;

  /// Throws ConfigError when out of range or infeasible.
  void validate() const;
};

struct GeneratedCorpus {
  corpus::KnowledgeBase kb;
  std::vector<corpus::QABag> train;
  std::vector<corpus::QABag> test;
  /// bag_id -> label per answer index; never part of training inputs.
  std::map<std::int64_t, std::vector<AnswerLabel>> provenance;
};

/// Irrelevant-answer rate of the predicate at `index` in cfg.predicates.
double irrelevant_rate(const GenConfig& cfg, std::size_t index);

/// Multiplier of both noise rates for a bag with `n_answers` answers.
double noise_factor(const GenConfig& cfg, int n_answers);

/// Deterministic in `cfg`. Every bag draws from its own stream keyed by
/// (seed, bag_id), so bag contents do not depend on generation order.
GeneratedCorpus generate(const GenConfig& cfg);

/// Fixed template inventories, exposed for documentation and tests.
const std::vector<std::string>& question_templates();
const std::vector<std::string>& answer_templates();
const std::vector<std::string>& inconsistent_templates();
const std::vector<std::string>& generic_openers();

/// Writes kb.tsv, train.jsonl, test.jsonl, provenance.jsonl, gen_config.json.
void write_corpus(const std::filesystem::path& dir, const GeneratedCorpus& corpus, const GenConfig& cfg);

std::map<std::int64_t, std::vector<AnswerLabel>> load_provenance(const std::filesystem::path& path);

std::string config_to_json(const GenConfig& cfg);

}  // namespace kbqa::synth
