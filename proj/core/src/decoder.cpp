#include "kbqa/decoder.hpp"

#include <cmath>
#include <string>

#include "activations.hpp"
#include "kbqa/batch_model.hpp"
#include "kbqa/errors.hpp"
#include "kbqa/vocabulary.hpp"

namespace kbqa::model {

namespace {

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

struct LstmOut {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

LstmOut lstm_step(const LstmParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& h,
                  const Eigen::VectorXd& c) {
  const Eigen::Index n = p.wh.cols();
  Eigen::VectorXd z = p.wx * x + p.wh * h + p.b;
  Eigen::VectorXd i = sigmoid(z.segment(0, n));
  Eigen::VectorXd f = sigmoid(z.segment(n, n));
  Eigen::VectorXd g = tanh_of(z.segment(2 * n, n));
  Eigen::VectorXd o = sigmoid(z.segment(3 * n, n));
  LstmOut out;
  out.c = f.cwiseProduct(c) + i.cwiseProduct(g);
  out.h = o.cwiseProduct(tanh_of(out.c));
  return out;
}

Eigen::VectorXd score(const ScorerParams& p, const Eigen::VectorXd& query, const Eigen::MatrixXd& memory,
                      const Eigen::VectorXd& hist) {
  Eigen::VectorXd base = p.ws * query + p.b;
  Eigen::MatrixXd pre = p.wm * memory;
  Eigen::VectorXd out(memory.cols());
  for (Eigen::Index j = 0; j < memory.cols(); ++j) {
    out[j] = p.v.dot(tanh_of(base + pre.col(j) + p.wh * hist[j]));
  }
  return out;
}

void check_finite(const Eigen::VectorXd& v, int step, const char* what) {
  if (!v.allFinite()) {
    throw NumericalError(std::string("non-finite ") + what + " logits at decoder step " + std::to_string(step));
  }
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

EncodedQuestion encode_question(std::span<const int> token_ids, const ModelParams& params) {
  const auto& d = params.dims;
  const auto n = static_cast<Eigen::Index>(token_ids.size());
  if (n == 0) throw InputError("cannot encode an empty question");
  const int hd = d.enc_hidden();
  Eigen::MatrixXd fwd(hd, n), bwd(hd, n);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hd), c = Eigen::VectorXd::Zero(hd);
  for (Eigen::Index t = 0; t < n; ++t) {
    auto o = lstm_step(params.enc_fwd, params.word_emb.col(token_ids[static_cast<std::size_t>(t)]), h, c);
    h = o.h;
    c = o.c;
    fwd.col(t) = h;
  }
  h.setZero();
  c.setZero();
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    auto o = lstm_step(params.enc_bwd, params.word_emb.col(token_ids[static_cast<std::size_t>(t)]), h, c);
    h = o.h;
    c = o.c;
    bwd.col(t) = h;
  }
  EncodedQuestion q;
  q.memory.resize(2 * hd, n);
  q.memory.topRows(hd) = fwd;
  q.memory.bottomRows(hd) = bwd;
  q.summary.resize(2 * hd);
  q.summary << fwd.col(n - 1), bwd.col(0);
  return q;
}

EncodedKB encode_kb(std::span<const FactRow> facts, const ModelParams& params) {
  const int k = params.dims.kb;
  EncodedKB kb;
  kb.memory.resize(3 * k, static_cast<Eigen::Index>(facts.size()));
  for (std::size_t j = 0; j < facts.size(); ++j) {
    const auto& f = facts[j];
    if (f.subject < 0 || f.subject >= params.entity_emb.cols() || f.object < 0 ||
        f.object >= params.entity_emb.cols() || f.predicate < 0 || f.predicate >= params.pred_emb.cols()) {
      throw InputError("fact row out of embedding range");
    }
    const auto col = static_cast<Eigen::Index>(j);
    kb.memory.col(col).segment(0, k) = params.entity_emb.col(f.subject);
    kb.memory.col(col).segment(k, k) = params.pred_emb.col(f.predicate);
    kb.memory.col(col).segment(2 * k, k) = params.entity_emb.col(f.object);
  }
  return kb;
}

DecoderState initial_state(const EncodedQuestion& q, const EncodedKB& kb, const ModelParams& params) {
  const auto& d = params.dims;
  DecoderState st;
  st.s = tanh_of(params.bridge_w * q.summary + params.bridge_b);
  st.cell = Eigen::VectorXd::Zero(d.hidden);
  st.ctx_q = Eigen::VectorXd::Zero(d.hidden);
  st.ctx_kb = Eigen::VectorXd::Zero(d.fact_width());
  st.hist_q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q.length()));
  st.hist_kb = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kb.size()));
  return st;
}

std::pair<StepOutput, DecoderState> decode_step(const DecoderState& state, int prev_token,
                                                const EncodedQuestion& q, const EncodedKB& kb,
                                                const BagInput& input, const ModelParams& params,
                                                const DecodeOptions& opts) {
  const auto& d = params.dims;
  if (state.hist_q.size() != static_cast<Eigen::Index>(q.length()) ||
      state.hist_kb.size() != static_cast<Eigen::Index>(kb.size())) {
    throw ContractError("decoder histories do not match memory sizes");
  }
  if (prev_token < 0 || prev_token >= d.vocab) throw InputError("previous token outside base vocabulary");
  const int step = state.step + 1;
  const Eigen::VectorXd word = params.word_emb.col(prev_token);

  Eigen::VectorXd x(d.decoder_input());
  x << word, state.ctx_q, state.ctx_kb;
  auto cell = lstm_step(params.dec, x, state.s, state.cell);

  DecoderState next;
  next.s = cell.h;
  next.cell = cell.c;
  next.step = step;

  StepOutput out;
  Eigen::VectorXd eq = score(params.attn_q, next.s, q.memory, state.hist_q);
  check_finite(eq, step, "question attention");
  out.attn_q = softmax(eq);
  next.ctx_q = q.memory * out.attn_q;
  next.hist_q = state.hist_q + out.attn_q;

  const bool has_kb = kb.size() > 0;
  if (has_kb) {
    Eigen::VectorXd ek = score(params.attn_kb, next.s, kb.memory, state.hist_kb);
    check_finite(ek, step, "KB attention");
    out.attn_kb = softmax(ek);
    next.ctx_kb = kb.memory * out.attn_kb;
    next.hist_kb = state.hist_kb + out.attn_kb;
  } else {
    out.attn_kb.resize(0);
    next.ctx_kb = Eigen::VectorXd::Zero(d.fact_width());
    next.hist_kb = state.hist_kb;
  }

  // Mode selector.
  Eigen::VectorXd mode_in(d.hidden + d.embed);
  mode_in << next.s, word;
  Eigen::Vector3d mode_logits =
      params.mode.w2 * tanh_of(params.mode.w1 * mode_in + params.mode.b1) + params.mode.b2;
  mode_logits += opts.mode_logit_offset;
  check_finite(mode_logits, step, "mode");
  if (opts.forced_modes) {
    out.modes = *opts.forced_modes;
  } else if (has_kb) {
    out.modes = softmax(mode_logits);
  } else {
    out.modes.setZero();
    out.modes.head<2>() = softmax(mode_logits.head<2>());
  }

  // Prediction mode.
  Eigen::VectorXd pred_in(d.hidden + d.hidden + d.fact_width());
  pred_in << next.s, next.ctx_q, next.ctx_kb;
  Eigen::VectorXd pred_logits =
      params.predict.w2 * tanh_of(params.predict.w1 * pred_in + params.predict.b1) +
      params.predict.b2;
  check_finite(pred_logits, step, "prediction");
  out.p_predict = softmax(pred_logits);

  // Copy mode.
  Eigen::VectorXd copy_query(2 * d.hidden);
  copy_query << next.s, next.ctx_q;
  Eigen::VectorXd copy_logits = score(params.copy, copy_query, q.memory, state.hist_q);
  check_finite(copy_logits, step, "copy");
  out.p_copy = softmax(copy_logits);

  // Retrieve mode.
  if (has_kb) {
    Eigen::VectorXd ret_query(d.hidden + d.fact_width());
    ret_query << next.s, next.ctx_kb;
    Eigen::VectorXd ret_logits = score(params.retrieve, ret_query, kb.memory, state.hist_kb);
    check_finite(ret_logits, step, "retrieve");
    out.p_retrieve = softmax(ret_logits);
  } else {
    out.p_retrieve.resize(0);
  }

  out.distribution = Eigen::VectorXd::Zero(input.ext_size());
  out.distribution.head(d.vocab) = out.modes[kPredict] * out.p_predict;
  for (std::size_t j = 0; j < input.question_ext.size(); ++j) {
    out.distribution[input.question_ext[j]] += out.modes[kCopy] * out.p_copy[static_cast<Eigen::Index>(j)];
  }
  for (std::size_t j = 0; j < input.object_ext.size(); ++j) {
    out.distribution[input.object_ext[j]] += out.modes[kRetrieve] * out.p_retrieve[static_cast<Eigen::Index>(j)];
  }
  return {std::move(out), std::move(next)};
}

SequenceScore sequence_logprob(const BagInput& input, const AnswerTarget& answer, const ModelParams& params) {
  if (answer.target_ext.empty()) throw InputError("empty answer target");
  const BagInput* bags[] = {&input};
  const SequenceSpec seq{0, &answer, 1.0};
  BatchStats stats;
  forward_backward(params, bags, std::span<const SequenceSpec>(&seq, 1), nullptr, &stats);
  SequenceScore out;
  out.steps = std::move(stats.step_logprobs.front());
  out.total = stats.logprobs.front();
  return out;
}

std::vector<int> greedy_decode(const BagInput& input, const ModelParams& params, std::size_t max_len) {
  std::vector<int> out;
  if (max_len == 0) return out;
  const auto q = encode_question(input.question_ids, params);
  const auto kb = encode_kb(input.facts, params);
  auto state = initial_state(q, kb, params);
  int prev = Vocabulary::kBos;
  while (out.size() < max_len) {
    auto [step, next] = decode_step(state, prev, q, kb, input, params);
    Eigen::Index best = 0;
    step.distribution.maxCoeff(&best);
    const int tok = static_cast<int>(best);
    if (tok == Vocabulary::kEos) break;
    out.push_back(tok);
    prev = tok < input.vocab_size ? tok : Vocabulary::kUnk;
    state = std::move(next);
  }
  return out;
}

std::vector<std::string> greedy_decode_tokens(const BagInput& input, const Lexicon& lex,
                                              const ModelParams& params, std::size_t max_len) {
  std::vector<std::string> out;
  for (int id : greedy_decode(input, params, max_len)) out.push_back(ext_surface(input, lex, id));
  return out;
}

}  // namespace kbqa::model
