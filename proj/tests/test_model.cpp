#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "kbqa/batch_model.hpp"
#include "kbqa/checkpoint.hpp"
#include "kbqa/decoder.hpp"
#include "kbqa/errors.hpp"
#include "kbqa/extended_vocab.hpp"
#include "test_support.hpp"

namespace kbqa {
namespace {

using namespace kbqa::model;

struct ModelTest : ::testing::Test {
  testing::Fixture fx;
  ModelDims dims = testing::tiny_dims(fx.lex);
  ModelParams params = testing::spread_params(dims, 5, 4.0);

  const BagInput& input(std::size_t b) const { return fx.prepared[b].input; }
};

TEST_F(ModelTest, SingleTokenQuestion) {
  std::vector<int> ids{fx.lex.words().encode("nickname")};
  auto q = encode_question(ids, params);
  ASSERT_EQ(q.memory.rows(), dims.hidden);
  ASSERT_EQ(q.memory.cols(), 1);
  EXPECT_EQ(q.summary, Eigen::VectorXd(q.memory.col(0)));
}

TEST_F(ModelTest, QuestionMemoryShape) {
  auto q = encode_question(input(0).question_ids, params);
  EXPECT_EQ(q.memory.cols(), static_cast<Eigen::Index>(input(0).question_length()));
  EXPECT_EQ(q.memory.rows(), dims.hidden);
  EXPECT_EQ(q.summary.size(), dims.hidden);
  EXPECT_THROW(encode_question(std::vector<int>{}, params), InputError);
}

TEST_F(ModelTest, ReversalSwapsDirectionsWithTiedWeights) {
  auto p = params;
  p.enc_bwd = p.enc_fwd;
  const int h = dims.enc_hidden();
  std::vector<int> x{5, 9, 6, 7, 4};
  std::vector<int> rx(x.rbegin(), x.rend());
  auto a = encode_question(x, p);
  auto b = encode_question(rx, p);
  EXPECT_TRUE(b.summary.head(h).isApprox(a.summary.tail(h), 1e-14));
  EXPECT_TRUE(b.summary.tail(h).isApprox(a.summary.head(h), 1e-14));
  const auto L = static_cast<Eigen::Index>(x.size());
  for (Eigen::Index t = 0; t < L; ++t) {
    EXPECT_TRUE(b.memory.col(t).head(h).isApprox(a.memory.col(L - 1 - t).tail(h), 1e-14));
  }
  // A palindrome is its own reversal, so both halves coincide.
  std::vector<int> pal{5, 9, 6, 9, 5};
  auto c = encode_question(pal, p);
  EXPECT_TRUE(c.summary.head(h).isApprox(c.summary.tail(h), 1e-14));
  // Untied directions do not have this symmetry.
  auto d = encode_question(pal, params);
  EXPECT_FALSE(d.summary.head(h).isApprox(d.summary.tail(h), 1e-6));
}

TEST_F(ModelTest, KbMemoryIsEmbeddingConcatenation) {
  const auto& f = input(0).facts;
  ASSERT_GE(f.size(), 2u);
  auto one = encode_kb(std::span(f.data(), 1), params);
  ASSERT_EQ(one.memory.cols(), 1);
  ASSERT_EQ(one.memory.rows(), 3 * dims.kb);
  Eigen::VectorXd expect(3 * dims.kb);
  expect << params.entity_emb.col(f[0].subject), params.pred_emb.col(f[0].predicate), params.entity_emb.col(f[0].object);
  EXPECT_EQ(Eigen::VectorXd(one.memory.col(0)), expect);

  auto all = encode_kb(f, params);
  std::vector<FactRow> rev(f.rbegin(), f.rend());
  auto r = encode_kb(rev, params);
  const auto n = static_cast<Eigen::Index>(f.size());
  for (Eigen::Index j = 0; j < n; ++j) EXPECT_EQ(Eigen::VectorXd(r.memory.col(j)), Eigen::VectorXd(all.memory.col(n - 1 - j)));

  // Facts 0 and 1 share subject and predicate; only the object block differs.
  const int k = dims.kb;
  EXPECT_EQ(Eigen::VectorXd(all.memory.col(0).head(k)), Eigen::VectorXd(all.memory.col(1).head(k)));
  EXPECT_EQ(Eigen::VectorXd(all.memory.col(0).segment(k, k)), Eigen::VectorXd(all.memory.col(1).segment(k, k)));
  EXPECT_NE(Eigen::VectorXd(all.memory.col(0).tail(k)), Eigen::VectorXd(all.memory.col(1).tail(k)));
  // Fact 2 shares only the subject.
  EXPECT_EQ(Eigen::VectorXd(all.memory.col(0).head(k)), Eigen::VectorXd(all.memory.col(2).head(k)));
  EXPECT_NE(Eigen::VectorXd(all.memory.col(0).segment(k, k)), Eigen::VectorXd(all.memory.col(2).segment(k, k)));
}

// Runs `steps` decoder steps feeding the given previous tokens.
struct Rollout {
  std::vector<StepOutput> outs;
  std::vector<DecoderState> states;
};

Rollout rollout(const BagInput& in, const ModelParams& p, const std::vector<int>& prev, const DecodeOptions& o = {}) {
  auto q = encode_question(in.question_ids, p);
  auto kb = encode_kb(in.facts, p);
  Rollout r;
  auto st = initial_state(q, kb, p);
  for (int tok : prev) {
    auto [out, next] = decode_step(st, tok, q, kb, in, p, o);
    r.outs.push_back(out);
    r.states.push_back(next);
    st = next;
  }
  return r;
}

TEST_F(ModelTest, StepDistributionsAreNormalized) {
  for (std::size_t b = 0; b < fx.prepared.size(); ++b) {
    const auto& ans = fx.prepared[b].answers[0];
    auto r = rollout(input(b), params, ans.input_ids);
    for (std::size_t t = 0; t < r.outs.size(); ++t) {
      const auto& o = r.outs[t];
      EXPECT_EQ(o.distribution.size(), input(b).ext_size());
      EXPECT_GE(o.distribution.minCoeff(), 0.0);
      EXPECT_NEAR(o.distribution.sum(), 1.0, 1e-6);
      EXPECT_NEAR(o.modes.sum(), 1.0, 1e-6);
      EXPECT_NEAR(o.p_predict.sum(), 1.0, 1e-9);
      EXPECT_NEAR(o.p_copy.sum(), 1.0, 1e-9);
      EXPECT_NEAR(o.p_retrieve.sum(), 1.0, 1e-9);
      // Histories accumulate one attention distribution per step.
      EXPECT_NEAR(r.states[t].hist_q.sum(), static_cast<double>(t + 1), 1e-5);
      EXPECT_NEAR(r.states[t].hist_kb.sum(), static_cast<double>(t + 1), 1e-5);
      EXPECT_GE(r.states[t].hist_q.minCoeff(), 0.0);
      EXPECT_GE(r.states[t].hist_kb.minCoeff(), 0.0);
    }
  }
}

TEST_F(ModelTest, HistoryIsSumOfAttention) {
  const auto& ans = fx.prepared[0].answers[2];
  auto r = rollout(input(0), params, ans.input_ids);
  Eigen::VectorXd hq = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input(0).question_length()));
  Eigen::VectorXd hk = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input(0).fact_count()));
  for (std::size_t t = 0; t < r.outs.size(); ++t) {
    hq += r.outs[t].attn_q;
    hk += r.outs[t].attn_kb;
    EXPECT_TRUE(r.states[t].hist_q.isApprox(hq, 1e-14));
    EXPECT_TRUE(r.states[t].hist_kb.isApprox(hk, 1e-14));
  }
}

TEST_F(ModelTest, MixtureEqualsConvexCombination) {
  const auto& in = input(0);
  const auto& ans = fx.prepared[0].answers[1];
  auto r = rollout(in, params, ans.input_ids);
  for (const auto& o : r.outs) {
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(in.ext_size());
    for (int v = 0; v < in.vocab_size; ++v) expect[v] += o.modes[kPredict] * o.p_predict[v];
    for (std::size_t j = 0; j < in.question_ext.size(); ++j) {
      expect[in.question_ext[j]] += o.modes[kCopy] * o.p_copy[static_cast<Eigen::Index>(j)];
    }
    for (std::size_t j = 0; j < in.object_ext.size(); ++j) {
      expect[in.object_ext[j]] += o.modes[kRetrieve] * o.p_retrieve[static_cast<Eigen::Index>(j)];
    }
    EXPECT_LT((o.distribution - expect).cwiseAbs().maxCoeff(), 1e-12);
    // The selector is not degenerate under these params.
    EXPECT_GT(o.modes.minCoeff(), 1e-6);
  }
}

TEST_F(ModelTest, ForcedCopyPutsMassOnQuestionTokensOnly) {
  const auto& in = input(0);
  DecodeOptions o;
  o.forced_modes = Eigen::Vector3d(0, 1, 0);
  auto r = rollout(in, params, fx.prepared[0].answers[3].input_ids, o);
  std::set<int> question(in.question_ext.begin(), in.question_ext.end());
  for (const auto& out : r.outs) {
    for (int e = 0; e < in.ext_size(); ++e) {
      if (!question.count(e)) EXPECT_EQ(out.distribution[e], 0.0) << ext_surface(in, fx.lex, e);
    }
    EXPECT_NEAR(out.distribution.sum(), 1.0, 1e-12);
  }
}

TEST_F(ModelTest, SuppressingCopyRemovesQuestionOnlyMass) {
  // "zyzzyva" is in neither the vocabulary nor the facts.
  auto bag = testing::make_bag(fx.kb, 98, "zyzzyva nickname of Cao Cao", {"it is A-man"}, {0, 1});
  auto in = prepare_bag(bag, fx.kb, fx.lex);
  DecodeOptions o;
  o.mode_logit_offset = Eigen::Vector3d(0.0, -1e300, 0.0);
  auto r = rollout(in, params, prepare_answer(bag.answers[0], in, fx.lex).input_ids, o);
  std::set<int> reachable;
  for (int v = 0; v < in.vocab_size; ++v) reachable.insert(v);
  reachable.insert(in.object_ext.begin(), in.object_ext.end());
  std::size_t question_only = 0;
  for (int e : in.question_ext) question_only += !reachable.count(e);
  ASSERT_EQ(question_only, 1u);
  auto plain = rollout(in, params, prepare_answer(bag.answers[0], in, fx.lex).input_ids);
  EXPECT_GT(plain.outs[0].distribution[in.question_ext[0]], 0.0);
  for (const auto& out : r.outs) {
    EXPECT_EQ(out.modes[kCopy], 0.0);
    for (int e : in.question_ext) {
      if (!reachable.count(e)) EXPECT_EQ(out.distribution[e], 0.0);
    }
  }
}

TEST(UniformModel, ClosedFormLogprob) {
  testing::UniformCorpus u;
  auto p = u.zero_params();
  for (const auto& pb : u.prepared) {
    ASSERT_EQ(pb.input.ext_size(), testing::UniformCorpus::kExtSize);
    for (const auto& ans : pb.answers) {
      auto s = sequence_logprob(pb.input, ans, p);
      const double l = static_cast<double>(ans.steps());
      EXPECT_NEAR(s.total, -l * std::log(18.0), 1e-12);
      for (double x : s.steps) EXPECT_NEAR(x, -std::log(18.0), 1e-12);
    }
  }
}

TEST_F(ModelTest, SequenceLogprobMatchesChainedSteps) {
  // A two-token answer: "Mengde" is an atomic object token.
  auto bag = testing::make_bag(fx.kb, 99, "nickname of Cao Cao please", {"it Mengde"}, {0, 1});
  auto in = prepare_bag(bag, fx.kb, fx.lex);
  auto ans = prepare_answer(bag.answers[0], in, fx.lex);
  ASSERT_EQ(ans.answer_length(), 2u);
  auto s = sequence_logprob(in, ans, params);
  ASSERT_EQ(s.steps.size(), 3u);
  auto r = rollout(in, params, ans.input_ids);
  double total = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double lp = std::log(r.outs[t].distribution[ans.target_ext[t]]);
    EXPECT_NEAR(s.steps[t], lp, 1e-12);
    total += lp;
  }
  EXPECT_NEAR(s.total, total, 1e-12);
  double sum = 0.0;
  for (double x : s.steps) sum += x;
  EXPECT_NEAR(sum, s.total, 1e-9);
}

TEST_F(ModelTest, BatchedRouteMatchesSingleSequences) {
  std::vector<const BagInput*> ins;
  std::vector<SequenceSpec> seqs;
  for (std::size_t b = 0; b < fx.prepared.size(); ++b) {
    ins.push_back(&fx.prepared[b].input);
    for (const auto& a : fx.prepared[b].answers) seqs.push_back({b, &a, 0.5 + 0.1 * static_cast<double>(seqs.size())});
  }
  BatchStats st;
  const double loss = forward_backward(params, ins, seqs, nullptr, &st);
  double expect = 0.0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    auto one = sequence_logprob(*ins[seqs[s].bag], *seqs[s].answer, params);
    EXPECT_NEAR(st.logprobs[s], one.total, 1e-10);
    ASSERT_EQ(st.step_logprobs[s].size(), one.steps.size());
    for (std::size_t t = 0; t < one.steps.size(); ++t) EXPECT_NEAR(st.step_logprobs[s][t], one.steps[t], 1e-10);
    expect -= seqs[s].weight * one.total;
  }
  EXPECT_NEAR(loss, expect, 1e-9);
}

TEST_F(ModelTest, GradientMatchesFiniteDifferences) {
  std::vector<const BagInput*> ins{&input(0), &input(1)};
  std::vector<SequenceSpec> seqs{{0, &fx.prepared[0].answers[1], 1.0}, {1, &fx.prepared[1].answers[1], 0.7}};
  auto p = testing::spread_params(dims, 17, 2.0);
  auto g = ModelParams::zeros_like(p);
  forward_backward(p, ins, seqs, &g);
  std::mt19937_64 rng(3);
  const double eps = 1e-4;
  auto gt = g.tensors();
  auto pt = p.tensors();
  double worst = 0.0;
  for (std::size_t k = 0; k < pt.size(); ++k) {
    std::uniform_int_distribution<Eigen::Index> pick(0, pt[k].size() - 1);
    for (int trial = 0; trial < 3; ++trial) {
      const auto i = pick(rng);
      const double orig = pt[k].data[i];
      pt[k].data[i] = orig + eps;
      const double up = forward_backward(p, ins, seqs, nullptr);
      pt[k].data[i] = orig - eps;
      const double down = forward_backward(p, ins, seqs, nullptr);
      pt[k].data[i] = orig;
      const double num = (up - down) / (2 * eps);
      const double ana = gt[k].data[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << pt[k].name << "[" << i << "] analytic " << ana << " numeric " << num;
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST_F(ModelTest, GreedyDecode) {
  EXPECT_TRUE(greedy_decode(input(0), params, 0).empty());
  auto a = greedy_decode(input(0), params, 12);
  EXPECT_LE(a.size(), 12u);
  EXPECT_EQ(a, greedy_decode(input(0), params, 12));
  auto toks = greedy_decode_tokens(input(0), fx.lex, params, 12);
  ASSERT_EQ(toks.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(toks[i], ext_surface(input(0), fx.lex, a[i]));
}

TEST_F(ModelTest, NonFiniteParamsRaiseNumericalError) {
  auto p = params;
  p.predict.b2[4] = std::numeric_limits<double>::quiet_NaN();
  const auto& ans = fx.prepared[0].answers[0];
  EXPECT_THROW(sequence_logprob(input(0), ans, p), NumericalError);
}

TEST(Params, InitRangesAndForgetBias) {
  testing::Fixture fx;
  auto d = testing::tiny_dims(fx.lex);
  auto p = init_params(d, 1);
  EXPECT_TRUE(p.all_finite());
  const int h = d.enc_hidden();
  EXPECT_TRUE((p.enc_fwd.b.segment(h, h).array() == 1.0).all());
  EXPECT_TRUE((p.dec.b.segment(d.hidden, d.hidden).array() == 1.0).all());
  EXPECT_LE(p.dec.wx.cwiseAbs().maxCoeff(), 0.08);
  EXPECT_EQ(p.word_emb.cols(), d.vocab);
  auto q = init_params(d, 1);
  EXPECT_EQ(p.dec.wh, q.dec.wh);
  EXPECT_NE(p.dec.wh, init_params(d, 2).dec.wh);
  std::size_t n = 0;
  for (const auto& t : p.tensors()) n += static_cast<std::size_t>(t.size());
  EXPECT_EQ(n, p.parameter_count());
}

TEST(Params, DimsValidation) {
  ModelDims d;
  d.vocab = 10;
  d.entity_rows = 5;
  d.predicate_rows = 2;
  d.hidden = 15;  // odd: directions cannot split it
  EXPECT_THROW(d.validate(), ConfigError);
  d.hidden = 16;
  EXPECT_NO_THROW(d.validate());
  d.embed = 0;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripAndHashCheck) {
  testing::Fixture fx;
  auto d = testing::tiny_dims(fx.lex);
  Checkpoint ck{init_params(d, 4), fx.lex, R"({"epoch":3})"};
  auto dir = testing::temp_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", ck);
  auto back = load_checkpoint(dir / "m.ckpt", fx.lex.hash());
  EXPECT_EQ(back.params.dims, d);
  auto a = ck.params.tensors();
  auto b = back.params.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].flat(), b[i].flat());
  }
  EXPECT_EQ(back.lexicon.hash(), fx.lex.hash());
  EXPECT_EQ(back.lexicon.words().tokens(), fx.lex.words().tokens());
  EXPECT_EQ(back.metadata_json, R"({"epoch":3})");
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", fx.lex.hash() ^ 1), LoadError);

  // Saving the loaded checkpoint reproduces the bytes.
  save_checkpoint(dir / "again.ckpt", back);
  EXPECT_EQ(testing::read_file(dir / "m.ckpt"), testing::read_file(dir / "again.ckpt"));

  auto bytes = testing::read_file(dir / "m.ckpt");
  {
    std::ofstream f(dir / "trunc.ckpt", std::ios::binary);
    f << bytes.substr(0, bytes.size() - 8);
  }
  EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), LoadError);
  {
    std::ofstream f(dir / "bad.ckpt", std::ios::binary);
    f << "NOTACKPT" << bytes.substr(8);
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), LoadError);
  {
    std::ofstream f(dir / "long.ckpt", std::ios::binary);
    f << bytes << "x";
  }
  EXPECT_THROW(load_checkpoint(dir / "long.ckpt"), LoadError);
}

}  // namespace
}  // namespace kbqa
