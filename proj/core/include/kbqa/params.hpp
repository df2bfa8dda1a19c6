#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kbqa::model {

/// Layer sizes. `hidden` is the decoder state; each encoder direction uses
/// hidden/2 so a question memory column has `hidden` entries.
struct ModelDims {
  int embed = 200;
  int kb = 200;
  int hidden = 600;
  int vocab = 0;
  int entity_rows = 0;
  int predicate_rows = 0;

  int enc_hidden() const { return hidden / 2; }
  int fact_width() const { return 3 * kb; }
  int attn() const { return hidden; }
  int mlp() const { return hidden; }
  int decoder_input() const { return embed + hidden + fact_width(); }

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Gates are stacked [input, forget, cell, output], `n` rows each.
struct LstmParams {
  Eigen::MatrixXd wx;
  Eigen::MatrixXd wh;
  Eigen::VectorXd b;
};

/// score_j = v . tanh(ws * query + wm * memory_j + wh * hist_j + b)
struct ScorerParams {
  Eigen::MatrixXd ws;
  Eigen::MatrixXd wm;
  Eigen::VectorXd wh;
  Eigen::VectorXd b;
  Eigen::VectorXd v;
};

/// logits = w2 * tanh(w1 * x + b1) + b2
struct MlpParams {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

/// Flat view of one parameter tensor.
struct TensorRef {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<Eigen::VectorXd> flat() const { return {data, size()}; }
};

struct ConstTensorRef {
  std::string name;
  const double* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<const Eigen::VectorXd> flat() const { return {data, size()}; }
};

/// Every learnable tensor. Embedding tables store one column per symbol.
struct ModelParams {
  ModelDims dims;

  Eigen::MatrixXd word_emb;    // embed x vocab
  Eigen::MatrixXd entity_emb;  // kb x entity_rows (subjects and objects)
  Eigen::MatrixXd pred_emb;    // kb x predicate_rows

  LstmParams enc_fwd;
  LstmParams enc_bwd;
  Eigen::MatrixXd bridge_w;  // decoder init: tanh(bridge_w q + bridge_b)
  Eigen::VectorXd bridge_b;
  LstmParams dec;  // input [word; ctx_q; ctx_kb]

  ScorerParams attn_q;
  ScorerParams attn_kb;
  MlpParams mode;      // input [s; word] -> 3 logits {predict, copy, retrieve}
  MlpParams predict;   // input [s; ctx_q; ctx_kb] -> vocab logits
  ScorerParams copy;   // query [s; ctx_q] over question memory
  ScorerParams retrieve;  // query [s; ctx_kb] over KB memory

  ModelParams() = default;
  explicit ModelParams(const ModelDims& d);  // zero-filled, correctly shaped

  static ModelParams zeros_like(const ModelParams& p) { return ModelParams(p.dims); }

  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;
  std::size_t parameter_count() const;
  void set_zero();
  bool all_finite() const;
};

/// Uniform(-0.08, 0.08) everywhere, forget-gate biases set to 1.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// dst += scale * src, tensor by tensor.
void axpy(double scale, const ModelParams& src, ModelParams& dst);
double global_norm(const ModelParams& p);

}  // namespace kbqa::model
