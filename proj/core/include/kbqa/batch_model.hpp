#pragma once

#include <span>
#include <vector>

#include "kbqa/extended_vocab.hpp"
#include "kbqa/params.hpp"

namespace kbqa::model {

/// One teacher-forced answer inside a batch; `bag` indexes the bag list.
struct SequenceSpec {
  std::size_t bag = 0;
  const AnswerTarget* answer = nullptr;
  double weight = 1.0;
};

struct BatchStats {
  std::vector<double> logprobs;                   // per sequence, summed over steps
  std::vector<std::vector<double>> step_logprobs;  // per sequence, per step
};

/// Computes loss = sum_s weight_s * -log p(answer_s | question, facts) for
/// all sequences at once (time-major, one GEMM per layer and step). When
/// `grads` is non-null the gradient of the loss is added to it.
double forward_backward(const ModelParams& params, std::span<const BagInput* const> bags,
                        std::span<const SequenceSpec> seqs, ModelParams* grads,
                        BatchStats* stats = nullptr);

}  // namespace kbqa::model
