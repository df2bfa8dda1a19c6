#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kbqa/batch_model.hpp"
#include "kbqa/corpus.hpp"
#include "kbqa/extended_vocab.hpp"
#include "kbqa/params.hpp"
#include "kbqa/weights.hpp"

namespace kbqa::loss {

enum class LossKind { kNll, kSel, kWgt };

const char* to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::kNll;
  double alpha = 0.6;
  bool length_normalization = true;  // inside the selection argmax only
  Scheme weighting = Scheme::kKb;
  ZeroFallback fallback = ZeroFallback::kUniform;

  void validate() const;
};

/// A bag in model-input form together with its teacher-forcing targets.
struct PreparedBag {
  std::int64_t bag_id = 0;
  model::BagInput input;
  std::vector<model::AnswerTarget> answers;

  std::size_t size() const { return answers.size(); }
};

PreparedBag prepare(const corpus::QABag& bag, const corpus::KnowledgeBase& kb, const model::Lexicon& lex);

/// (5+1)^alpha / (5+L)^alpha. L is the answer length without EOS.
double length_norm(std::size_t answer_length, double alpha = 0.6);

struct LossResult {
  double loss = 0.0;
  std::size_t sequences = 0;          // answers that carried gradient
  std::size_t tokens = 0;             // scored steps of those answers
  double unweighted_nll = 0.0;        // sum of -log p over those answers
  std::vector<std::size_t> selected;  // per bag, sel only
};

/// Log-likelihood of every answer of every bag, no gradients.
std::vector<std::vector<double>> answer_logprobs(const model::ModelParams& params,
                                                 std::span<const PreparedBag* const> bags);

/// Argmax of LN_i * logp_i (or logp_i when `normalize` is false); ties go to
/// the lowest index.
std::size_t select_instance(std::span<const double> logprobs, std::span<const std::size_t> lengths,
                            double alpha = 0.6, bool normalize = true);
std::size_t select_instance(const PreparedBag& bag, const model::ModelParams& params, double alpha = 0.6,
                            bool normalize = true);

/// -(1/m) sum over all m answers of log p. Gradients are added to `grads`.
LossResult nll_loss(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
                    model::ModelParams* grads = nullptr);

/// -(1/n) sum over bags of the selected answer's log p. `forced` fixes the
/// selection per bag instead of running the argmax.
LossResult sel_loss(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
                    model::ModelParams* grads = nullptr, double alpha = 0.6, bool normalize = true,
                    std::optional<std::span<const std::size_t>> forced = std::nullopt);

/// One bag's term of the weighted loss: -sum_i (C_i/Z) log p_i (0 when dropped).
double weighted_bag_nll(std::span<const double> logprobs, const BagWeights& weights);

/// -(1/n) sum over bags of sum_i (C_i/Z) log p_i. Dropped bags are skipped
/// and do not count towards n.
LossResult wgt_loss(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
                    std::span<const BagWeights* const> weights, model::ModelParams* grads = nullptr);

}  // namespace kbqa::loss
