#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kbqa/corpus.hpp"
#include "kbqa/extended_vocab.hpp"

namespace kbqa::loss {

enum class Scheme { kKb, kContent, kUniform };
enum class ZeroFallback { kUniform, kDropBag };

const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);
const char* to_string(ZeroFallback f);
ZeroFallback fallback_from_string(const std::string& s);

/// Consensus weights of one bag. `z` is the sum of `weights` exactly. When
/// every raw weight is zero the fallback has already been applied: uniform
/// sets all weights to 1, drop-bag leaves them at 0 and marks the bag.
struct BagWeights {
  std::int64_t bag_id = 0;
  Scheme scheme = Scheme::kUniform;
  std::vector<double> weights;
  double z = 0.0;
  bool fallback = false;
  bool dropped = false;

  std::size_t size() const { return weights.size(); }
  double normalized(std::size_t i) const { return weights[i] / z; }
};

/// Builds weights from raw consensus scores, applying the zero-sum fallback.
BagWeights make_weights(std::int64_t bag_id, Scheme scheme, std::vector<double> raw,
                        ZeroFallback fallback = ZeroFallback::kUniform);

BagWeights uniform_weights(const corpus::QABag& bag);

/// Object value -> number of answers mentioning it (presence, not tokens).
std::map<std::string, int> entity_counts(const corpus::QABag& bag);

/// c_e is the number of answers mentioning object value e (each answer
/// counts once); an answer's weight sums c_e over its distinct values.
BagWeights kb_weights(const corpus::QABag& bag, ZeroFallback fallback = ZeroFallback::kUniform);

/// Pluggable sentence encoder for content weighting.
class AnswerEncoder {
 public:
  virtual ~AnswerEncoder() = default;
  virtual Eigen::VectorXd encode(const corpus::Utterance& answer) const = 0;
};

/// Mean of a fixed word-embedding table over the answer's tokens.
class MeanEmbeddingEncoder : public AnswerEncoder {
 public:
  MeanEmbeddingEncoder(Vocabulary words, Eigen::MatrixXd embeddings);
  Eigen::VectorXd encode(const corpus::Utterance& answer) const override;

 private:
  Vocabulary words_;
  Eigen::MatrixXd embeddings_;  // one column per word id
};

/// C_i = max_{j != i} cos(i, j), negative values clamped to 0. A single
/// answer gets weight 1.
BagWeights weights_from_similarity(std::int64_t bag_id, const Eigen::MatrixXd& cosine,
                                   ZeroFallback fallback = ZeroFallback::kUniform);

BagWeights content_weights(const corpus::QABag& bag, const AnswerEncoder& encoder,
                           ZeroFallback fallback = ZeroFallback::kUniform);

/// One JSON record per line: bag_id, scheme, weights, z, fallback, dropped.
void save_weights(const std::filesystem::path& path, std::span<const BagWeights> weights);
std::map<std::int64_t, BagWeights> load_weights(const std::filesystem::path& path);

}  // namespace kbqa::loss
