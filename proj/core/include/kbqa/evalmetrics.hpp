#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbqa/corpus.hpp"

namespace kbqa::eval {

using Tokens = std::vector<std::string>;

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// ROUGE-L F1 (beta = 1) against one reference.
double rouge_l_f1(std::span<const std::string> pred, std::span<const std::string> ref);
/// Best F1 over the references.
double rouge_l(std::span<const std::string> pred, std::span<const Tokens> refs);
/// Mean over questions of the per-question best F1.
double rougeL(std::span<const Tokens> preds, std::span<const std::vector<Tokens>> refs);

/// Clipped n-gram counts of one prediction; corpus BLEU sums these.
struct BleuStats {
  std::size_t match1 = 0;
  std::size_t total1 = 0;
  std::size_t match2 = 0;
  std::size_t total2 = 0;
  std::size_t pred_length = 0;
  std::size_t ref_length = 0;  // closest reference length, shorter on ties

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(std::span<const std::string> pred, std::span<const Tokens> refs);
double bleu2_from_stats(const BleuStats& s);
/// Corpus BLEU-2 with uniform weights, brevity penalty and multi-reference clipping.
double bleu2(std::span<const Tokens> preds, std::span<const std::vector<Tokens>> refs);

/// Union of the object values grounded in the bag's answers, sorted.
std::vector<std::string> gold_objects(const corpus::QABag& bag);

/// True iff `pred` contains the tokens of some value in `gold` as a
/// contiguous span.
bool entity_hit(std::span<const std::string> pred, std::span<const std::string> gold);

struct QuestionResult {
  std::int64_t bag_id = 0;
  Tokens prediction;
  std::optional<bool> hit;  // empty when the bag has no gold object
  double rouge = 0.0;
  BleuStats bleu;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double bleu2 = 0.0;
  double rougeL = 0.0;
  std::size_t questions = 0;
  std::size_t accuracy_questions = 0;  // questions with a gold object
  std::size_t excluded = 0;            // questions without one
  std::vector<QuestionResult> per_question;
  std::optional<Interval> accuracy_ci, bleu2_ci, rougeL_ci;
};

/// Predictions are re-split on whitespace before scoring, so atomic
/// multi-word values count as their words.
EvalReport evaluate(std::span<const Tokens> predictions, std::span<const corpus::QABag> gold);

/// Recomputes the corpus numbers from the per-question breakdown.
void aggregate(EvalReport& report);

/// Percentile bootstrap (2.5%, 97.5%) over questions.
void bootstrap(EvalReport& report, int resamples = 1000, std::uint64_t seed = 0);

/// One-line JSON record; per-question entries when `with_questions`.
std::string report_json(const EvalReport& report, bool with_questions = false);
std::string report_table(const EvalReport& report);

}  // namespace kbqa::eval
