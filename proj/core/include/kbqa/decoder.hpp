#pragma once

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kbqa/extended_vocab.hpp"
#include "kbqa/params.hpp"

namespace kbqa::model {

enum Mode : int { kPredict = 0, kCopy = 1, kRetrieve = 2 };

/// Column t of `memory` is [forward state at t, backward state at t]; the
/// summary is [last forward state, last backward state].
struct EncodedQuestion {
  Eigen::MatrixXd memory;  // hidden x L
  Eigen::VectorXd summary;
  std::size_t length() const { return static_cast<std::size_t>(memory.cols()); }
};

/// Column j is [e_s; e_p; e_o] of fact j.
struct EncodedKB {
  Eigen::MatrixXd memory;  // 3*kb x N
  std::size_t size() const { return static_cast<std::size_t>(memory.cols()); }
};

struct DecoderState {
  Eigen::VectorXd s;
  Eigen::VectorXd cell;
  Eigen::VectorXd ctx_q;
  Eigen::VectorXd ctx_kb;
  Eigen::VectorXd hist_q;   // summed question attention over steps so far
  Eigen::VectorXd hist_kb;  // summed KB attention over steps so far
  int step = 0;
};

struct StepOutput {
  Eigen::VectorXd distribution;  // over the extended vocabulary
  Eigen::Vector3d modes;         // selector output {predict, copy, retrieve}
  Eigen::VectorXd p_predict;     // over base vocabulary
  Eigen::VectorXd p_copy;        // over question positions
  Eigen::VectorXd p_retrieve;    // over facts
  Eigen::VectorXd attn_q;
  Eigen::VectorXd attn_kb;
};

struct DecodeOptions {
  /// Replaces the mode selector's output (must be a distribution).
  std::optional<Eigen::Vector3d> forced_modes;
  /// Added to the selector logits before the softmax.
  Eigen::Vector3d mode_logit_offset = Eigen::Vector3d::Zero();
};

EncodedQuestion encode_question(std::span<const int> token_ids, const ModelParams& params);
EncodedKB encode_kb(std::span<const FactRow> facts, const ModelParams& params);
DecoderState initial_state(const EncodedQuestion& q, const EncodedKB& kb, const ModelParams& params);

/// One decoder step. Returns the mixture distribution and the next state;
/// histories in the returned state include this step's attention.
std::pair<StepOutput, DecoderState> decode_step(const DecoderState& state, int prev_token,
                                                const EncodedQuestion& q, const EncodedKB& kb,
                                                const BagInput& input, const ModelParams& params,
                                                const DecodeOptions& opts = {});

struct SequenceScore {
  double total = 0.0;
  std::vector<double> steps;
};

/// Teacher-forced log-probability of an answer (including the EOS step).
SequenceScore sequence_logprob(const BagInput& input, const AnswerTarget& answer,
                               const ModelParams& params);

/// Argmax decoding; stops at EOS or after max_len tokens. Returns extended ids.
std::vector<int> greedy_decode(const BagInput& input, const ModelParams& params, std::size_t max_len);
std::vector<std::string> greedy_decode_tokens(const BagInput& input, const Lexicon& lex,
                                              const ModelParams& params, std::size_t max_len);

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);

}  // namespace kbqa::model
