#include "kbqa/miloss.hpp"

#include <cmath>

#include "kbqa/errors.hpp"

namespace kbqa::loss {

namespace {

std::vector<const model::BagInput*> inputs_of(std::span<const PreparedBag* const> bags) {
  std::vector<const model::BagInput*> out;
  out.reserve(bags.size());
  for (const auto* b : bags) out.push_back(&b->input);
  return out;
}

LossResult run(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
               const std::vector<model::SequenceSpec>& seqs, model::ModelParams* grads) {
  LossResult r;
  if (seqs.empty()) return r;
  const auto inputs = inputs_of(bags);
  model::BatchStats stats;
  r.loss = model::forward_backward(params, inputs, seqs, grads, &stats);
  if (!std::isfinite(r.loss)) throw NumericalError("non-finite loss");
  r.sequences = seqs.size();
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    r.tokens += seqs[s].answer->steps();
    r.unweighted_nll -= stats.logprobs[s];
  }
  return r;
}

}  // namespace

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::kNll: return "nll";
    case LossKind::kSel: return "sel";
    case LossKind::kWgt: return "wgt";
  }
  return "?";
}

LossKind loss_from_string(const std::string& s) {
  if (s == "nll") return LossKind::kNll;
  if (s == "sel") return LossKind::kSel;
  if (s == "wgt") return LossKind::kWgt;
  throw ConfigError("unknown loss '" + s + "'");
}

void LossConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
}

PreparedBag prepare(const corpus::QABag& bag, const corpus::KnowledgeBase& kb, const model::Lexicon& lex) {
  PreparedBag p;
  p.bag_id = bag.bag_id;
  p.input = model::prepare_bag(bag, kb, lex);
  for (const auto& a : bag.answers) p.answers.push_back(model::prepare_answer(a, p.input, lex));
  return p;
}

double length_norm(std::size_t answer_length, double alpha) {
  if (answer_length < 1) throw InputError("length_norm needs an answer length of at least 1");
  return std::pow(6.0, alpha) / std::pow(5.0 + static_cast<double>(answer_length), alpha);
}

std::vector<std::vector<double>> answer_logprobs(const model::ModelParams& params,
                                                 std::span<const PreparedBag* const> bags) {
  std::vector<model::SequenceSpec> seqs;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (const auto& a : bags[b]->answers) seqs.push_back({b, &a, 0.0});
  }
  const auto inputs = inputs_of(bags);
  model::BatchStats stats;
  model::forward_backward(params, inputs, seqs, nullptr, &stats);
  std::vector<std::vector<double>> out(bags.size());
  for (std::size_t s = 0; s < seqs.size(); ++s) out[seqs[s].bag].push_back(stats.logprobs[s]);
  return out;
}

std::size_t select_instance(std::span<const double> logprobs, std::span<const std::size_t> lengths, double alpha,
                            bool normalize) {
  if (logprobs.empty()) throw InputError("cannot select from an empty bag");
  if (lengths.size() != logprobs.size()) throw ContractError("lengths and logprobs differ in size");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    const double score = normalize ? length_norm(lengths[i], alpha) * logprobs[i] : logprobs[i];
    if (i == 0 || score > best_score) {
      best = i;
      best_score = score;
    }
  }
  return best;
}

std::size_t select_instance(const PreparedBag& bag, const model::ModelParams& params, double alpha,
                            bool normalize) {
  const PreparedBag* one[] = {&bag};
  const auto lp = answer_logprobs(params, one);
  std::vector<std::size_t> lengths;
  for (const auto& a : bag.answers) lengths.push_back(a.answer_length());
  return select_instance(lp[0], lengths, alpha, normalize);
}

LossResult nll_loss(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
                    model::ModelParams* grads) {
  std::size_t m = 0;
  for (const auto* b : bags) m += b->size();
  if (m == 0) throw InputError("nll_loss needs at least one answer");
  std::vector<model::SequenceSpec> seqs;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (const auto& a : bags[b]->answers) seqs.push_back({b, &a, 1.0 / static_cast<double>(m)});
  }
  return run(params, bags, seqs, grads);
}

LossResult sel_loss(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
                    model::ModelParams* grads, double alpha, bool normalize,
                    std::optional<std::span<const std::size_t>> forced) {
  const std::size_t n = bags.size();
  if (n == 0) throw InputError("sel_loss needs at least one bag");
  std::vector<std::size_t> selected(n, 0);
  if (forced) {
    if (forced->size() != n) throw ContractError("forced selection size differs from the bag count");
    for (std::size_t b = 0; b < n; ++b) {
      if ((*forced)[b] >= bags[b]->size()) throw ContractError("forced selection out of range");
      selected[b] = (*forced)[b];
    }
  } else {
    // Bags with one answer need no scoring pass.
    std::vector<const PreparedBag*> multi;
    std::vector<std::size_t> where;
    for (std::size_t b = 0; b < n; ++b) {
      if (bags[b]->size() > 1) {
        multi.push_back(bags[b]);
        where.push_back(b);
      }
    }
    if (!multi.empty()) {
      const auto lp = answer_logprobs(params, multi);
      for (std::size_t k = 0; k < multi.size(); ++k) {
        std::vector<std::size_t> lengths;
        for (const auto& a : multi[k]->answers) lengths.push_back(a.answer_length());
        selected[where[k]] = select_instance(lp[k], lengths, alpha, normalize);
      }
    }
  }
  std::vector<model::SequenceSpec> seqs;
  for (std::size_t b = 0; b < n; ++b) {
    seqs.push_back({b, &bags[b]->answers[selected[b]], 1.0 / static_cast<double>(n)});
  }
  auto r = run(params, bags, seqs, grads);
  r.selected = std::move(selected);
  return r;
}

double weighted_bag_nll(std::span<const double> logprobs, const BagWeights& w) {
  if (logprobs.size() != w.size()) {
    throw ContractError("bag_id " + std::to_string(w.bag_id) + ": " + std::to_string(logprobs.size()) +
                        " log-probabilities for " + std::to_string(w.size()) + " weights");
  }
  if (w.dropped) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s -= w.normalized(i) * logprobs[i];
  return s;
}

LossResult wgt_loss(const model::ModelParams& params, std::span<const PreparedBag* const> bags,
                    std::span<const BagWeights* const> weights, model::ModelParams* grads) {
  if (weights.size() != bags.size()) throw ContractError("one weight vector per bag is required");
  std::size_t n = 0;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    if (weights[b]->size() != bags[b]->size()) {
      throw ContractError("bag_id " + std::to_string(bags[b]->bag_id) + ": weight vector length " +
                          std::to_string(weights[b]->size()) + " does not match " +
                          std::to_string(bags[b]->size()) + " answers");
    }
    if (!weights[b]->dropped) ++n;
  }
  std::vector<model::SequenceSpec> seqs;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    const auto& w = *weights[b];
    if (w.dropped) continue;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double c = w.normalized(i) / static_cast<double>(n);
      if (c > 0.0) seqs.push_back({b, &bags[b]->answers[i], c});
    }
  }
  return run(params, bags, seqs, grads);
}

}  // namespace kbqa::loss
