#include "kbqa/params.hpp"

#include <cmath>
#include <random>

#include "kbqa/errors.hpp"

namespace kbqa::model {

void ModelDims::validate() const {
  if (embed <= 0 || kb <= 0 || hidden <= 0) throw ConfigError("model dims must be positive");
  if (hidden % 2 != 0) throw ConfigError("hidden size must be even (two encoder directions)");
  if (vocab <= 0 || entity_rows <= 0 || predicate_rows <= 0) {
    throw ConfigError("symbol table sizes must be positive");
  }
}

namespace {

LstmParams make_lstm(int n, int in) {
  return {Eigen::MatrixXd::Zero(4 * n, in), Eigen::MatrixXd::Zero(4 * n, n),
          Eigen::VectorXd::Zero(4 * n)};
}

ScorerParams make_scorer(int a, int query, int mem) {
  return {Eigen::MatrixXd::Zero(a, query), Eigen::MatrixXd::Zero(a, mem), Eigen::VectorXd::Zero(a),
          Eigen::VectorXd::Zero(a), Eigen::VectorXd::Zero(a)};
}

MlpParams make_mlp(int in, int hid, int out) {
  return {Eigen::MatrixXd::Zero(hid, in), Eigen::VectorXd::Zero(hid), Eigen::MatrixXd::Zero(out, hid),
          Eigen::VectorXd::Zero(out)};
}

template <class T>
void push(std::vector<TensorRef>& out, std::string name, T& t) {
  out.push_back(TensorRef{std::move(name), t.data(), t.rows(), t.cols()});
}

void push_lstm(std::vector<TensorRef>& out, const std::string& p, LstmParams& l) {
  push(out, p + ".wx", l.wx);
  push(out, p + ".wh", l.wh);
  push(out, p + ".b", l.b);
}

void push_scorer(std::vector<TensorRef>& out, const std::string& p, ScorerParams& s) {
  push(out, p + ".ws", s.ws);
  push(out, p + ".wm", s.wm);
  push(out, p + ".wh", s.wh);
  push(out, p + ".b", s.b);
  push(out, p + ".v", s.v);
}

void push_mlp(std::vector<TensorRef>& out, const std::string& p, MlpParams& m) {
  push(out, p + ".w1", m.w1);
  push(out, p + ".b1", m.b1);
  push(out, p + ".w2", m.w2);
  push(out, p + ".b2", m.b2);
}

}  // namespace

ModelParams::ModelParams(const ModelDims& d) : dims(d) {
  d.validate();
  const int e = d.embed, k = d.kb, h = d.hidden, hd = d.enc_hidden(), a = d.attn(), m = d.mlp();
  word_emb = Eigen::MatrixXd::Zero(e, d.vocab);
  entity_emb = Eigen::MatrixXd::Zero(k, d.entity_rows);
  pred_emb = Eigen::MatrixXd::Zero(k, d.predicate_rows);
  enc_fwd = make_lstm(hd, e);
  enc_bwd = make_lstm(hd, e);
  bridge_w = Eigen::MatrixXd::Zero(h, h);
  bridge_b = Eigen::VectorXd::Zero(h);
  dec = make_lstm(h, d.decoder_input());
  attn_q = make_scorer(a, h, h);
  attn_kb = make_scorer(a, h, d.fact_width());
  mode = make_mlp(h + e, m, 3);
  predict = make_mlp(h + h + d.fact_width(), m, d.vocab);
  copy = make_scorer(a, h + h, h);
  retrieve = make_scorer(a, h + d.fact_width(), d.fact_width());
}

std::vector<TensorRef> ModelParams::tensors() {
  std::vector<TensorRef> out;
  push(out, "word_emb", word_emb);
  push(out, "entity_emb", entity_emb);
  push(out, "pred_emb", pred_emb);
  push_lstm(out, "enc_fwd", enc_fwd);
  push_lstm(out, "enc_bwd", enc_bwd);
  push(out, "bridge.w", bridge_w);
  push(out, "bridge.b", bridge_b);
  push_lstm(out, "dec", dec);
  push_scorer(out, "attn_q", attn_q);
  push_scorer(out, "attn_kb", attn_kb);
  push_mlp(out, "mode", mode);
  push_mlp(out, "predict", predict);
  push_scorer(out, "copy", copy);
  push_scorer(out, "retrieve", retrieve);
  return out;
}

std::vector<ConstTensorRef> ModelParams::tensors() const {
  std::vector<ConstTensorRef> out;
  for (const auto& t : const_cast<ModelParams*>(this)->tensors()) out.push_back({t.name, t.data, t.rows, t.cols});
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.size());
  return n;
}

void ModelParams::set_zero() {
  for (auto& t : tensors()) t.flat().setZero();
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors()) {
    if (!t.flat().allFinite()) return false;
  }
  return true;
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p(dims);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.08, 0.08);
  for (auto& t : p.tensors()) {
    auto f = t.flat();
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = dist(rng);
  }
  p.enc_fwd.b.segment(dims.enc_hidden(), dims.enc_hidden()).setOnes();
  p.enc_bwd.b.segment(dims.enc_hidden(), dims.enc_hidden()).setOnes();
  p.dec.b.segment(dims.hidden, dims.hidden).setOnes();
  return p;
}

void axpy(double scale, const ModelParams& src, ModelParams& dst) {
  auto s = src.tensors();
  auto d = dst.tensors();
  if (s.size() != d.size()) throw ContractError("parameter layouts differ");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].size() != d[i].size()) throw ContractError("tensor shape mismatch: " + s[i].name);
    d[i].flat() += scale * s[i].flat();
  }
}

double global_norm(const ModelParams& p) {
  double sq = 0.0;
  for (const auto& t : p.tensors()) sq += t.flat().squaredNorm();
  return std::sqrt(sq);
}

}  // namespace kbqa::model
