#include "kbqa/batch_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "activations.hpp"
#include "kbqa/errors.hpp"
#include "kbqa/vocabulary.hpp"

namespace kbqa::model {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void sigmoid_inplace(Eigen::Block<MatrixXd> m) { m = (1.0 + (-m.array()).exp()).inverse().matrix(); }

/// Cached activations of one LSTM layer over a time-major batch.
struct LstmTrace {
  MatrixXd gates;  // 4n x (T*B), activated
  MatrixXd cell;   // n x (T*B)
  MatrixXd tanh_cell;
  MatrixXd hidden;
};

/// Runs an LSTM over precomputed input projections `zx` (4n x T*B).
void lstm_forward(const LstmParams& p, const MatrixXd& zx, Index steps, Index batch, const MatrixXd* h0,
                  LstmTrace& tr) {
  const Index n = p.wh.cols();
  tr.gates.resize(4 * n, steps * batch);
  tr.cell.resize(n, steps * batch);
  tr.tanh_cell.resize(n, steps * batch);
  tr.hidden.resize(n, steps * batch);
  MatrixXd z(4 * n, batch);
  for (Index t = 0; t < steps; ++t) {
    z = zx.middleCols(t * batch, batch);
    z.colwise() += p.b;
    if (t > 0) {
      z.noalias() += p.wh * tr.hidden.middleCols((t - 1) * batch, batch);
    } else if (h0) {
      z.noalias() += p.wh * *h0;
    }
    sigmoid_inplace(z.topRows(2 * n));
    tanh_inplace(z.middleRows(2 * n, n));
    sigmoid_inplace(z.bottomRows(n));
    auto c = tr.cell.middleCols(t * batch, batch);
    c = z.topRows(n).cwiseProduct(z.middleRows(2 * n, n));
    if (t > 0) c += z.middleRows(n, n).cwiseProduct(tr.cell.middleCols((t - 1) * batch, batch));
    tr.tanh_cell.middleCols(t * batch, batch) = tanh_of(c);
    tr.hidden.middleCols(t * batch, batch) =
        z.bottomRows(n).cwiseProduct(tr.tanh_cell.middleCols(t * batch, batch));
    tr.gates.middleCols(t * batch, batch) = z;
  }
}

/// Gradient of the pre-activations of one LSTM step, given dh and the
/// carried dc; updates dc to the previous step's cell gradient.
void lstm_step_backward(const LstmTrace& tr, Index t, Index stride, Index batch, const MatrixXd& dh, MatrixXd& dc,
                        MatrixXd& dz) {
  const Index n = tr.cell.rows();
  const auto g = tr.gates.middleCols(t * stride, batch);
  const auto i = g.topRows(n).array();
  const auto f = g.middleRows(n, n).array();
  const auto gg = g.middleRows(2 * n, n).array();
  const auto o = g.bottomRows(n).array();
  const auto tc = tr.tanh_cell.middleCols(t * stride, batch).array();
  dz.resize(4 * n, batch);
  dz.bottomRows(n) = (dh.array() * tc * o * (1.0 - o)).matrix();
  dc.array() += dh.array() * o * (1.0 - tc.square());
  dz.topRows(n) = (dc.array() * gg * i * (1.0 - i)).matrix();
  dz.middleRows(2 * n, n) = (dc.array() * i * (1.0 - gg.square())).matrix();
  if (t > 0) {
    dz.middleRows(n, n) = (dc.array() * tr.cell.middleCols((t - 1) * stride, batch).array() * f * (1.0 - f)).matrix();
  } else {
    dz.middleRows(n, n).setZero();
  }
  dc = (dc.array() * f).matrix();
}

VectorXd softmax_vec(const VectorXd& x) {
  VectorXd e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

double logsumexp3(const double (&v)[3]) {
  double mx = std::max({v[0], v[1], v[2]});
  if (mx == kNegInf) return kNegInf;
  return mx + std::log(std::exp(v[0] - mx) + std::exp(v[1] - mx) + std::exp(v[2] - mx));
}

struct BagCache {
  Index len = 0;
  Index facts = 0;
  MatrixXd mem_q;   // H x L
  MatrixXd mem_kb;  // 3K x N
  MatrixXd pre_attn_q, pre_attn_kb, pre_copy, pre_ret;  // A x L / A x N, bias folded in
  VectorXd summary;
};

struct SeqStepCache {
  MatrixXd a_q, a_kb, a_c, a_r;  // tanh activations of the scorers
  VectorXd alpha, beta;          // attention distributions
  VectorXd p_copy, p_ret;
  VectorXd hist_q, hist_kb;  // histories before this step
  double resp[3] = {0, 0, 0};
  Eigen::Vector3d modes = Eigen::Vector3d::Zero();
};

void scorer_forward(const ScorerParams& p, const MatrixXd& pre, const VectorXd& query_proj, const VectorXd& hist,
                    MatrixXd& act, VectorXd& logits) {
  act = pre;
  act.colwise() += query_proj;
  act.noalias() += p.wh * hist.transpose();
  tanh_inplace(act);
  logits.noalias() = act.transpose() * p.v;
}

/// Backprop of a scorer given d(logits). Accumulates into parameter grads
/// and the memory pre-activation grad; returns d(query projection) and adds
/// to d(hist).
void scorer_backward(const ScorerParams& p, ScorerParams* g, const MatrixXd& act, const VectorXd& dlogits,
                     const VectorXd& hist, MatrixXd& dpre, Eigen::Ref<VectorXd> dquery_proj, VectorXd& dhist) {
  MatrixXd da = (p.v * dlogits.transpose()).cwiseProduct((1.0 - act.array().square()).matrix());
  g->v.noalias() += act * dlogits;
  dquery_proj = da.rowwise().sum();
  dpre += da;
  g->wh.noalias() += da * hist;
  dhist.noalias() += da.transpose() * p.wh;
}

void check_finite(const MatrixXd& m, Index step, const char* what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string("non-finite ") + what + " logits at decoder step " + std::to_string(step + 1));
  }
}

/// As check_finite, for a matrix holding every decoder step; `off[t]` is the
/// first column of step t.
void check_finite_steps(const MatrixXd& m, const std::vector<Index>& off, const char* what) {
  if (m.allFinite()) return;
  Index col = 0;
  while (m.col(col).allFinite()) ++col;
  const auto t = std::upper_bound(off.begin(), off.end(), col) - off.begin() - 1;
  check_finite(m.col(col), t, what);
}

/// Sequences must be sorted by decreasing step count: at step t only the
/// first `active[t]` columns are live.
double forward_backward_sorted(const ModelParams& params, std::span<const BagInput* const> bags,
                               std::span<const SequenceSpec> seqs, ModelParams* grads, std::vector<double>& seq_logprob,
                               std::vector<std::vector<double>>* step_logprobs) {
  const auto& d = params.dims;
  const Index nb = static_cast<Index>(bags.size());
  const Index ns = static_cast<Index>(seqs.size());
  const Index H = d.hidden, hd = d.enc_hidden(), E = d.embed, K = d.kb, K3 = d.fact_width(), V = d.vocab;
  seq_logprob.assign(static_cast<std::size_t>(ns), 0.0);
  if (step_logprobs) step_logprobs->assign(static_cast<std::size_t>(ns), {});

  // ---------------------------------------------------------------- encoder
  Index lmax = 0;
  for (const auto* b : bags) {
    if (b->question_ids.empty()) throw InputError("cannot encode an empty question");
    lmax = std::max<Index>(lmax, static_cast<Index>(b->question_ids.size()));
  }
  MatrixXd x_fwd(E, lmax * nb), x_bwd(E, lmax * nb);
  std::vector<int> ids_fwd(static_cast<std::size_t>(lmax * nb), Vocabulary::kPad);
  std::vector<int> ids_bwd(ids_fwd);
  for (Index b = 0; b < nb; ++b) {
    const auto& q = bags[static_cast<std::size_t>(b)]->question_ids;
    const Index len = static_cast<Index>(q.size());
    for (Index t = 0; t < len; ++t) {
      ids_fwd[static_cast<std::size_t>(t * nb + b)] = q[static_cast<std::size_t>(t)];
      ids_bwd[static_cast<std::size_t>(t * nb + b)] = q[static_cast<std::size_t>(len - 1 - t)];
    }
  }
  for (Index c = 0; c < lmax * nb; ++c) {
    x_fwd.col(c) = params.word_emb.col(ids_fwd[static_cast<std::size_t>(c)]);
    x_bwd.col(c) = params.word_emb.col(ids_bwd[static_cast<std::size_t>(c)]);
  }
  LstmTrace enc_f, enc_b;
  {
    MatrixXd zx;
    zx.noalias() = params.enc_fwd.wx * x_fwd;
    lstm_forward(params.enc_fwd, zx, lmax, nb, nullptr, enc_f);
    zx.noalias() = params.enc_bwd.wx * x_bwd;
    lstm_forward(params.enc_bwd, zx, lmax, nb, nullptr, enc_b);
  }

  std::vector<BagCache> bc(static_cast<std::size_t>(nb));
  for (Index b = 0; b < nb; ++b) {
    const auto& in = *bags[static_cast<std::size_t>(b)];
    auto& c = bc[static_cast<std::size_t>(b)];
    c.len = static_cast<Index>(in.question_ids.size());
    c.facts = static_cast<Index>(in.facts.size());
    if (static_cast<Index>(in.question_ext.size()) != c.len || static_cast<Index>(in.object_ext.size()) != c.facts) {
      throw ContractError("bag input tables have inconsistent sizes");
    }
    c.mem_q.resize(H, c.len);
    for (Index j = 0; j < c.len; ++j) {
      c.mem_q.col(j).head(hd) = enc_f.hidden.col(j * nb + b);
      c.mem_q.col(j).tail(hd) = enc_b.hidden.col((c.len - 1 - j) * nb + b);
    }
    c.summary.resize(H);
    c.summary << enc_f.hidden.col((c.len - 1) * nb + b), enc_b.hidden.col((c.len - 1) * nb + b);
    c.mem_kb.resize(K3, c.facts);
    for (Index j = 0; j < c.facts; ++j) {
      const auto& f = in.facts[static_cast<std::size_t>(j)];
      if (f.subject < 0 || f.subject >= params.entity_emb.cols() || f.object < 0 ||
          f.object >= params.entity_emb.cols() || f.predicate < 0 || f.predicate >= params.pred_emb.cols()) {
        throw InputError("fact row out of embedding range");
      }
      c.mem_kb.col(j) << params.entity_emb.col(f.subject), params.pred_emb.col(f.predicate),
          params.entity_emb.col(f.object);
    }
    c.pre_attn_q.noalias() = params.attn_q.wm * c.mem_q;
    c.pre_attn_q.colwise() += params.attn_q.b;
    c.pre_copy.noalias() = params.copy.wm * c.mem_q;
    c.pre_copy.colwise() += params.copy.b;
    c.pre_attn_kb.noalias() = params.attn_kb.wm * c.mem_kb;
    c.pre_attn_kb.colwise() += params.attn_kb.b;
    c.pre_ret.noalias() = params.retrieve.wm * c.mem_kb;
    c.pre_ret.colwise() += params.retrieve.b;
  }

  // ---------------------------------------------------------------- decoder
  const Index tmax = static_cast<Index>(seqs[0].answer->steps());
  std::vector<Index> active(static_cast<std::size_t>(tmax), 0);
  for (const auto& s : seqs) {
    for (Index t = 0; t < static_cast<Index>(s.answer->steps()); ++t) ++active[static_cast<std::size_t>(t)];
  }

  MatrixXd q_seq(H, ns);
  for (Index s = 0; s < ns; ++s) q_seq.col(s) = bc[seqs[static_cast<std::size_t>(s)].bag].summary;
  MatrixXd s0;
  s0.noalias() = params.bridge_w * q_seq;
  s0.colwise() += params.bridge_b;
  tanh_inplace(s0);

  std::vector<VectorXd> hq(static_cast<std::size_t>(ns)), hk(static_cast<std::size_t>(ns));
  for (Index s = 0; s < ns; ++s) {
    const auto& c = bc[seqs[static_cast<std::size_t>(s)].bag];
    hq[static_cast<std::size_t>(s)] = VectorXd::Zero(c.len);
    hk[static_cast<std::size_t>(s)] = VectorXd::Zero(c.facts);
  }

  // Quantities that do not feed the recurrence are kept for every step in
  // one column per (step, sequence), so the output layers and all weight
  // gradients run as one product per batch. Step t owns columns
  // [off[t], off[t] + active[t]).
  std::vector<Index> off(static_cast<std::size_t>(tmax) + 1, 0);
  for (Index t = 0; t < tmax; ++t) off[static_cast<std::size_t>(t) + 1] = off[static_cast<std::size_t>(t)] + active[static_cast<std::size_t>(t)];
  const Index total = off.back();
  const auto col0 = [&](Index t) { return off[static_cast<std::size_t>(t)]; };
  MatrixXd dec_in(d.decoder_input(), total);  // [word; ctx_q; ctx_kb] of the previous step
  MatrixXd h_prev(H, total);
  MatrixXd pred_in(2 * H + K3, total);  // [s; ctx_q; ctx_kb]
  MatrixXd mode_in(H + E, total);       // [s; word]

  std::vector<std::vector<SeqStepCache>> steps(static_cast<std::size_t>(tmax));
  LstmTrace dec;
  dec.gates.resize(4 * H, tmax * ns);
  dec.cell.resize(H, tmax * ns);
  dec.tanh_cell.resize(H, tmax * ns);
  dec.hidden.resize(H, tmax * ns);
  std::vector<int> dec_ids(static_cast<std::size_t>(tmax * ns), Vocabulary::kPad);
  for (Index s = 0; s < ns; ++s) {
    const auto& a = *seqs[static_cast<std::size_t>(s)].answer;
    for (Index t = 0; t < static_cast<Index>(a.steps()); ++t) {
      const int id = a.input_ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= V) throw InputError("answer input id outside base vocabulary");
      dec_ids[static_cast<std::size_t>(t * ns + s)] = id;
    }
  }

  MatrixXd z, u_q, u_kb, u_c, u_r, ret_in;
  VectorXd logits;
  for (Index t = 0; t < tmax; ++t) {
    const Index na = active[static_cast<std::size_t>(t)];
    const Index c0 = col0(t);
    auto& sc = steps[static_cast<std::size_t>(t)];
    sc.resize(static_cast<std::size_t>(na));
    auto in = dec_in.middleCols(c0, na);
    for (Index s = 0; s < na; ++s) in.col(s).head(E) = params.word_emb.col(dec_ids[static_cast<std::size_t>(t * ns + s)]);
    if (t == 0) {
      in.bottomRows(H + K3).setZero();
      h_prev.middleCols(c0, na) = s0;
    } else {
      in.bottomRows(H + K3) = pred_in.block(H, col0(t - 1), H + K3, na);
      h_prev.middleCols(c0, na) = dec.hidden.middleCols((t - 1) * ns, na);
    }

    // LSTM cell.
    z.noalias() = params.dec.wx * in;
    z.colwise() += params.dec.b;
    z.noalias() += params.dec.wh * h_prev.middleCols(c0, na);
    sigmoid_inplace(z.topRows(2 * H));
    tanh_inplace(z.middleRows(2 * H, H));
    sigmoid_inplace(z.bottomRows(H));
    {
      auto c = dec.cell.middleCols(t * ns, na);
      c = z.topRows(H).cwiseProduct(z.middleRows(2 * H, H));
      if (t > 0) c += z.middleRows(H, H).cwiseProduct(dec.cell.middleCols((t - 1) * ns, na));
      dec.tanh_cell.middleCols(t * ns, na) = tanh_of(c);
      dec.hidden.middleCols(t * ns, na) = z.bottomRows(H).cwiseProduct(dec.tanh_cell.middleCols(t * ns, na));
      dec.gates.middleCols(t * ns, na) = z;
    }
    const auto S = dec.hidden.middleCols(t * ns, na);
    pred_in.block(0, c0, H, na) = S;
    mode_in.block(0, c0, H, na) = S;
    mode_in.block(H, c0, E, na) = in.topRows(E);

    // Attention reads.
    u_q.noalias() = params.attn_q.ws * S;
    u_kb.noalias() = params.attn_kb.ws * S;
    auto ctx_q = pred_in.block(H, c0, H, na);
    auto ctx_kb = pred_in.block(2 * H, c0, K3, na);
    ctx_q.setZero();
    ctx_kb.setZero();
    for (Index s = 0; s < na; ++s) {
      const auto& spec = seqs[static_cast<std::size_t>(s)];
      auto& ss = sc[static_cast<std::size_t>(s)];
      const auto& c = bc[spec.bag];
      ss.hist_q = hq[static_cast<std::size_t>(s)];
      ss.hist_kb = hk[static_cast<std::size_t>(s)];
      scorer_forward(params.attn_q, c.pre_attn_q, u_q.col(s), ss.hist_q, ss.a_q, logits);
      check_finite(logits, t, "question attention");
      ss.alpha = softmax_vec(logits);
      ctx_q.col(s).noalias() = c.mem_q * ss.alpha;
      hq[static_cast<std::size_t>(s)] += ss.alpha;
      if (c.facts > 0) {
        scorer_forward(params.attn_kb, c.pre_attn_kb, u_kb.col(s), ss.hist_kb, ss.a_kb, logits);
        check_finite(logits, t, "KB attention");
        ss.beta = softmax_vec(logits);
        ctx_kb.col(s).noalias() = c.mem_kb * ss.beta;
        hk[static_cast<std::size_t>(s)] += ss.beta;
      }
    }

    // Copy and retrieve queries.
    ret_in.resize(H + K3, na);
    ret_in << S, ctx_kb;
    u_c.noalias() = params.copy.ws * pred_in.block(0, c0, 2 * H, na);
    u_r.noalias() = params.retrieve.ws * ret_in;
    for (Index s = 0; s < na; ++s) {
      auto& ss = sc[static_cast<std::size_t>(s)];
      const auto& c = bc[seqs[static_cast<std::size_t>(s)].bag];
      scorer_forward(params.copy, c.pre_copy, u_c.col(s), ss.hist_q, ss.a_c, logits);
      check_finite(logits, t, "copy");
      ss.p_copy = softmax_vec(logits);
      if (c.facts > 0) {
        scorer_forward(params.retrieve, c.pre_ret, u_r.col(s), ss.hist_kb, ss.a_r, logits);
        check_finite(logits, t, "retrieve");
        ss.p_ret = softmax_vec(logits);
      }
    }
  }

  // Mode selector and prediction mode, all steps at once.
  MatrixXd z_m = params.mode.w1 * mode_in;
  z_m.colwise() += params.mode.b1;
  tanh_inplace(z_m);
  MatrixXd l_m = params.mode.w2 * z_m;
  l_m.colwise() += params.mode.b2;
  check_finite_steps(l_m, off, "mode");
  MatrixXd z_p = params.predict.w1 * pred_in;
  z_p.colwise() += params.predict.b1;
  tanh_inplace(z_p);
  MatrixXd p_pr = params.predict.w2 * z_p;
  p_pr.colwise() += params.predict.b2;
  check_finite_steps(p_pr, off, "prediction");
  for (Index j = 0; j < total; ++j) {
    auto col = p_pr.col(j);
    col = (col.array() - col.maxCoeff()).exp().matrix();
    col /= col.sum();
  }

  // Mixture log-probabilities.
  for (Index t = 0; t < tmax; ++t) {
    const Index na = active[static_cast<std::size_t>(t)];
    for (Index s = 0; s < na; ++s) {
      auto& ss = steps[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)];
      const auto& spec = seqs[static_cast<std::size_t>(s)];
      const auto& c = bc[spec.bag];
      const auto& in = *bags[spec.bag];
      const Index j = col0(t) + s;
      if (c.facts > 0) {
        ss.modes = softmax_vec(l_m.col(j));
      } else {
        ss.modes.setZero();
        ss.modes.head<2>() = softmax_vec(l_m.col(j).head<2>());
      }
      const int y = spec.answer->target_ext[static_cast<std::size_t>(t)];
      double lt[3] = {kNegInf, kNegInf, kNegInf};
      if (y < V && ss.modes[0] > 0.0) {
        lt[0] = std::log(ss.modes[0]) + std::log(p_pr(y, j));
      }
      double cp = 0.0;
      for (Index q = 0; q < c.len; ++q) {
        if (in.question_ext[static_cast<std::size_t>(q)] == y) cp += ss.p_copy[q];
      }
      if (cp > 0.0 && ss.modes[1] > 0.0) lt[1] = std::log(ss.modes[1]) + std::log(cp);
      double rp = 0.0;
      for (Index q = 0; q < c.facts; ++q) {
        if (in.object_ext[static_cast<std::size_t>(q)] == y) rp += ss.p_ret[q];
      }
      if (rp > 0.0 && ss.modes[2] > 0.0) lt[2] = std::log(ss.modes[2]) + std::log(rp);
      const double lp = logsumexp3(lt);
      if (!std::isfinite(lp)) {
        throw NumericalError("non-finite log-probability at decoder step " + std::to_string(t + 1));
      }
      for (int k = 0; k < 3; ++k) ss.resp[k] = lt[k] == kNegInf ? 0.0 : std::exp(lt[k] - lp);
      seq_logprob[static_cast<std::size_t>(s)] += lp;
      if (step_logprobs) (*step_logprobs)[static_cast<std::size_t>(s)].push_back(lp);
    }
  }
  if (!grads) return 0.0;

  // --------------------------------------------------------------- backward
  auto& g = *grads;

  // Output layers.
  MatrixXd dl_m = MatrixXd::Zero(3, total), dl_p = MatrixXd::Zero(V, total);
  for (Index t = 0; t < tmax; ++t) {
    for (Index s = 0; s < active[static_cast<std::size_t>(t)]; ++s) {
      const auto& ss = steps[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)];
      const auto& spec = seqs[static_cast<std::size_t>(s)];
      const Index j = col0(t) + s;
      const double w = -spec.weight;
      Eigen::Vector3d r(ss.resp[0], ss.resp[1], ss.resp[2]);
      dl_m.col(j) = w * (r - ss.modes);
      if (bc[spec.bag].facts == 0) dl_m(2, j) = 0.0;
      if (ss.resp[0] > 0.0) {
        dl_p.col(j) = -w * ss.resp[0] * p_pr.col(j);
        dl_p(spec.answer->target_ext[static_cast<std::size_t>(t)], j) += w * ss.resp[0];
      }
    }
  }
  MatrixXd din_p, din_m;
  {
    MatrixXd dz_p = params.predict.w2.transpose() * dl_p;
    dz_p.array() *= 1.0 - z_p.array().square();
    g.predict.w2.noalias() += dl_p * z_p.transpose();
    g.predict.b2 += dl_p.rowwise().sum();
    g.predict.w1.noalias() += dz_p * pred_in.transpose();
    g.predict.b1 += dz_p.rowwise().sum();
    din_p.noalias() = params.predict.w1.transpose() * dz_p;

    MatrixXd dz_m = params.mode.w2.transpose() * dl_m;
    dz_m.array() *= 1.0 - z_m.array().square();
    g.mode.w2.noalias() += dl_m * z_m.transpose();
    g.mode.b2 += dl_m.rowwise().sum();
    g.mode.w1.noalias() += dz_m * mode_in.transpose();
    g.mode.b1 += dz_m.rowwise().sum();
    din_m.noalias() = params.mode.w1.transpose() * dz_m;
    for (Index t = 0; t < tmax; ++t) {
      for (Index s = 0; s < active[static_cast<std::size_t>(t)]; ++s) {
        g.word_emb.col(dec_ids[static_cast<std::size_t>(t * ns + s)]) += din_m.col(col0(t) + s).tail(E);
      }
    }
  }

  MatrixXd ds_next = MatrixXd::Zero(H, ns), dc = MatrixXd::Zero(H, ns);
  MatrixXd dctxq_next = MatrixXd::Zero(H, ns), dctxkb_next = MatrixXd::Zero(K3, ns);
  std::vector<VectorXd> carry_q(static_cast<std::size_t>(ns)), carry_kb(static_cast<std::size_t>(ns));
  std::vector<MatrixXd> dmem_q(static_cast<std::size_t>(nb)), dmem_kb(static_cast<std::size_t>(nb));
  std::vector<MatrixXd> dpre_aq(static_cast<std::size_t>(nb)), dpre_akb(static_cast<std::size_t>(nb)),
      dpre_c(static_cast<std::size_t>(nb)), dpre_r(static_cast<std::size_t>(nb));
  for (Index b = 0; b < nb; ++b) {
    const auto& c = bc[static_cast<std::size_t>(b)];
    dmem_q[static_cast<std::size_t>(b)] = MatrixXd::Zero(H, c.len);
    dmem_kb[static_cast<std::size_t>(b)] = MatrixXd::Zero(K3, c.facts);
    dpre_aq[static_cast<std::size_t>(b)] = MatrixXd::Zero(d.attn(), c.len);
    dpre_c[static_cast<std::size_t>(b)] = MatrixXd::Zero(d.attn(), c.len);
    dpre_akb[static_cast<std::size_t>(b)] = MatrixXd::Zero(d.attn(), c.facts);
    dpre_r[static_cast<std::size_t>(b)] = MatrixXd::Zero(d.attn(), c.facts);
  }
  for (Index s = 0; s < ns; ++s) {
    const auto& c = bc[seqs[static_cast<std::size_t>(s)].bag];
    carry_q[static_cast<std::size_t>(s)] = VectorXd::Zero(c.len);
    carry_kb[static_cast<std::size_t>(s)] = VectorXd::Zero(c.facts);
  }
  // Query-projection and gate gradients of every step, for the weight
  // gradients after the loop.
  MatrixXd du_c = MatrixXd::Zero(d.attn(), total), du_r = MatrixXd::Zero(d.attn(), total);
  MatrixXd du_q = MatrixXd::Zero(d.attn(), total), du_kb = MatrixXd::Zero(d.attn(), total);
  MatrixXd dz_all(4 * H, total);

  // Columns past a step's active count stay zero in the carried buffers,
  // which is exactly the boundary condition of a sequence's last step.
  MatrixXd ds, dctx_q, dctx_kb, dz, dcw, din;
  VectorXd dlog;
  for (Index t = tmax - 1; t >= 0; --t) {
    const Index na = active[static_cast<std::size_t>(t)];
    const Index c0 = col0(t);
    const auto& sc = steps[static_cast<std::size_t>(t)];
    ds = ds_next.leftCols(na) + din_p.block(0, c0, H, na) + din_m.block(0, c0, H, na);
    dctx_q = dctxq_next.leftCols(na) + din_p.block(H, c0, H, na);
    dctx_kb = dctxkb_next.leftCols(na) + din_p.block(2 * H, c0, K3, na);

    // Copy and retrieve scorers.
    std::vector<VectorXd> dhist_q(static_cast<std::size_t>(na)), dhist_kb(static_cast<std::size_t>(na));
    for (Index s = 0; s < na; ++s) {
      const auto& ss = sc[static_cast<std::size_t>(s)];
      const auto& spec = seqs[static_cast<std::size_t>(s)];
      const auto& in = *bags[spec.bag];
      const auto& c = bc[spec.bag];
      const double w = -spec.weight;
      const int y = spec.answer->target_ext[static_cast<std::size_t>(t)];
      dhist_q[static_cast<std::size_t>(s)] = VectorXd::Zero(c.len);
      dhist_kb[static_cast<std::size_t>(s)] = VectorXd::Zero(c.facts);
      if (ss.resp[1] > 0.0) {
        VectorXd target = VectorXd::Zero(c.len);
        for (Index j = 0; j < c.len; ++j) {
          if (in.question_ext[static_cast<std::size_t>(j)] == y) target[j] = ss.p_copy[j];
        }
        target /= target.sum();
        dlog = w * ss.resp[1] * (target - ss.p_copy);
        scorer_backward(params.copy, &g.copy, ss.a_c, dlog, ss.hist_q, dpre_c[spec.bag], du_c.col(c0 + s),
                        dhist_q[static_cast<std::size_t>(s)]);
      }
      if (ss.resp[2] > 0.0) {
        VectorXd target = VectorXd::Zero(c.facts);
        for (Index j = 0; j < c.facts; ++j) {
          if (in.object_ext[static_cast<std::size_t>(j)] == y) target[j] = ss.p_ret[j];
        }
        target /= target.sum();
        dlog = w * ss.resp[2] * (target - ss.p_ret);
        scorer_backward(params.retrieve, &g.retrieve, ss.a_r, dlog, ss.hist_kb, dpre_r[spec.bag], du_r.col(c0 + s),
                        dhist_kb[static_cast<std::size_t>(s)]);
      }
    }
    {
      MatrixXd dcopy_in = params.copy.ws.transpose() * du_c.middleCols(c0, na);
      MatrixXd dret_in = params.retrieve.ws.transpose() * du_r.middleCols(c0, na);
      ds += dcopy_in.topRows(H) + dret_in.topRows(H);
      dctx_q += dcopy_in.bottomRows(H);
      dctx_kb += dret_in.bottomRows(K3);
    }
    // Attention reads.
    for (Index s = 0; s < na; ++s) {
      const auto& ss = sc[static_cast<std::size_t>(s)];
      const auto& spec = seqs[static_cast<std::size_t>(s)];
      const auto& c = bc[spec.bag];
      {
        VectorXd dalpha = c.mem_q.transpose() * dctx_q.col(s) + carry_q[static_cast<std::size_t>(s)];
        dmem_q[spec.bag].noalias() += dctx_q.col(s) * ss.alpha.transpose();
        VectorXd de = ss.alpha.cwiseProduct((dalpha.array() - ss.alpha.dot(dalpha)).matrix());
        scorer_backward(params.attn_q, &g.attn_q, ss.a_q, de, ss.hist_q, dpre_aq[spec.bag], du_q.col(c0 + s),
                        dhist_q[static_cast<std::size_t>(s)]);
        carry_q[static_cast<std::size_t>(s)] += dhist_q[static_cast<std::size_t>(s)];
      }
      if (c.facts > 0) {
        VectorXd dbeta = c.mem_kb.transpose() * dctx_kb.col(s) + carry_kb[static_cast<std::size_t>(s)];
        dmem_kb[spec.bag].noalias() += dctx_kb.col(s) * ss.beta.transpose();
        VectorXd de = ss.beta.cwiseProduct((dbeta.array() - ss.beta.dot(dbeta)).matrix());
        scorer_backward(params.attn_kb, &g.attn_kb, ss.a_kb, de, ss.hist_kb, dpre_akb[spec.bag], du_kb.col(c0 + s),
                        dhist_kb[static_cast<std::size_t>(s)]);
        carry_kb[static_cast<std::size_t>(s)] += dhist_kb[static_cast<std::size_t>(s)];
      }
    }
    ds.noalias() += params.attn_q.ws.transpose() * du_q.middleCols(c0, na);
    ds.noalias() += params.attn_kb.ws.transpose() * du_kb.middleCols(c0, na);

    // Decoder LSTM.
    dcw = dc.leftCols(na);
    lstm_step_backward(dec, t, ns, na, ds, dcw, dz);
    dc.leftCols(na) = dcw;
    dz_all.middleCols(c0, na) = dz;
    din.noalias() = params.dec.wx.transpose() * dz;
    for (Index s = 0; s < na; ++s) {
      g.word_emb.col(dec_ids[static_cast<std::size_t>(t * ns + s)]) += din.col(s).head(E);
    }
    dctxq_next.leftCols(na) = din.middleRows(E, H);
    dctxkb_next.leftCols(na) = din.bottomRows(K3);
    ds_next.leftCols(na).noalias() = params.dec.wh.transpose() * dz;
  }

  // Weight gradients of the per-step layers.
  g.copy.ws.noalias() += du_c * pred_in.topRows(2 * H).transpose();
  g.retrieve.ws.leftCols(H).noalias() += du_r * pred_in.topRows(H).transpose();
  g.retrieve.ws.rightCols(K3).noalias() += du_r * pred_in.bottomRows(K3).transpose();
  g.attn_q.ws.noalias() += du_q * pred_in.topRows(H).transpose();
  g.attn_kb.ws.noalias() += du_kb * pred_in.topRows(H).transpose();
  g.dec.wx.noalias() += dz_all * dec_in.transpose();
  g.dec.b += dz_all.rowwise().sum();
  g.dec.wh.noalias() += dz_all * h_prev.transpose();

  // Bridge.
  MatrixXd dpre0 = ds_next.cwiseProduct((1.0 - s0.array().square()).matrix());
  g.bridge_w.noalias() += dpre0 * q_seq.transpose();
  g.bridge_b += dpre0.rowwise().sum();
  MatrixXd dq_seq = params.bridge_w.transpose() * dpre0;

  // Memories.
  MatrixXd dh_f = MatrixXd::Zero(hd, lmax * nb), dh_b = MatrixXd::Zero(hd, lmax * nb);
  for (Index s = 0; s < ns; ++s) {
    const auto b = static_cast<Index>(seqs[static_cast<std::size_t>(s)].bag);
    const Index len = bc[static_cast<std::size_t>(b)].len;
    dh_f.col((len - 1) * nb + b) += dq_seq.col(s).head(hd);
    dh_b.col((len - 1) * nb + b) += dq_seq.col(s).tail(hd);
  }
  for (Index b = 0; b < nb; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const auto& c = bc[bi];
    g.attn_q.wm.noalias() += dpre_aq[bi] * c.mem_q.transpose();
    g.attn_q.b += dpre_aq[bi].rowwise().sum();
    g.copy.wm.noalias() += dpre_c[bi] * c.mem_q.transpose();
    g.copy.b += dpre_c[bi].rowwise().sum();
    dmem_q[bi].noalias() += params.attn_q.wm.transpose() * dpre_aq[bi];
    dmem_q[bi].noalias() += params.copy.wm.transpose() * dpre_c[bi];
    if (c.facts > 0) {
      g.attn_kb.wm.noalias() += dpre_akb[bi] * c.mem_kb.transpose();
      g.attn_kb.b += dpre_akb[bi].rowwise().sum();
      g.retrieve.wm.noalias() += dpre_r[bi] * c.mem_kb.transpose();
      g.retrieve.b += dpre_r[bi].rowwise().sum();
      dmem_kb[bi].noalias() += params.attn_kb.wm.transpose() * dpre_akb[bi];
      dmem_kb[bi].noalias() += params.retrieve.wm.transpose() * dpre_r[bi];
      const auto& in = *bags[bi];
      for (Index j = 0; j < c.facts; ++j) {
        const auto& f = in.facts[static_cast<std::size_t>(j)];
        g.entity_emb.col(f.subject) += dmem_kb[bi].col(j).head(K);
        g.pred_emb.col(f.predicate) += dmem_kb[bi].col(j).segment(K, K);
        g.entity_emb.col(f.object) += dmem_kb[bi].col(j).tail(K);
      }
    }
    for (Index j = 0; j < c.len; ++j) {
      dh_f.col(j * nb + b) += dmem_q[bi].col(j).head(hd);
      dh_b.col((c.len - 1 - j) * nb + b) += dmem_q[bi].col(j).tail(hd);
    }
  }

  // Encoder.
  auto encoder_backward = [&](const LstmParams& p, LstmParams& gp, const LstmTrace& tr, const MatrixXd& dh_in,
                              const MatrixXd& x, const std::vector<int>& ids) {
    MatrixXd dz_all(4 * hd, lmax * nb);
    MatrixXd dh_next = MatrixXd::Zero(hd, nb), dcell = MatrixXd::Zero(hd, nb), dzt;
    for (Index t = lmax - 1; t >= 0; --t) {
      MatrixXd dh = dh_in.middleCols(t * nb, nb) + dh_next;
      lstm_step_backward(tr, t, nb, nb, dh, dcell, dzt);
      dz_all.middleCols(t * nb, nb) = dzt;
      if (t > 0) gp.wh.noalias() += dzt * tr.hidden.middleCols((t - 1) * nb, nb).transpose();
      dh_next.noalias() = p.wh.transpose() * dzt;
    }
    gp.wx.noalias() += dz_all * x.transpose();
    gp.b += dz_all.rowwise().sum();
    MatrixXd dx = p.wx.transpose() * dz_all;
    for (Index c = 0; c < lmax * nb; ++c) g.word_emb.col(ids[static_cast<std::size_t>(c)]) += dx.col(c);
  };
  encoder_backward(params.enc_fwd, g.enc_fwd, enc_f, dh_f, x_fwd, ids_fwd);
  encoder_backward(params.enc_bwd, g.enc_bwd, enc_b, dh_b, x_bwd, ids_bwd);
  return 0.0;
}

}  // namespace

double forward_backward(const ModelParams& params, std::span<const BagInput* const> bags,
                        std::span<const SequenceSpec> seqs, ModelParams* grads, BatchStats* stats) {
  const std::size_t ns = seqs.size();
  if (stats) {
    stats->logprobs.assign(ns, 0.0);
    stats->step_logprobs.assign(ns, {});
  }
  if (ns == 0) return 0.0;
  for (const auto& s : seqs) {
    if (s.bag >= bags.size() || s.answer == nullptr || s.answer->target_ext.empty() ||
        s.answer->input_ids.size() != s.answer->target_ext.size()) {
      throw ContractError("malformed sequence spec");
    }
  }
  if (grads && !(grads->dims == params.dims)) throw ContractError("gradient buffer has different dims");

  std::vector<std::size_t> order(ns);
  for (std::size_t i = 0; i < ns; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return seqs[a].answer->steps() > seqs[b].answer->steps();
  });
  std::vector<SequenceSpec> sorted(ns);
  for (std::size_t i = 0; i < ns; ++i) sorted[i] = seqs[order[i]];

  std::vector<double> lp_sorted;
  std::vector<std::vector<double>> steps_sorted;
  forward_backward_sorted(params, bags, sorted, grads, lp_sorted, stats ? &steps_sorted : nullptr);

  // Summed in the caller's sequence order.
  std::vector<double> lp(ns);
  for (std::size_t i = 0; i < ns; ++i) lp[order[i]] = lp_sorted[i];
  double loss = 0.0;
  for (std::size_t s = 0; s < ns; ++s) loss -= seqs[s].weight * lp[s];
  if (stats) {
    stats->logprobs = lp;
    for (std::size_t i = 0; i < ns; ++i) stats->step_logprobs[order[i]] = std::move(steps_sorted[i]);
  }
  return loss;
}

}  // namespace kbqa::model
