#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbqa/checkpoint.hpp"
#include "kbqa/corpus.hpp"
#include "kbqa/evalmetrics.hpp"
#include "kbqa/miloss.hpp"
#include "kbqa/optimizer.hpp"
#include "kbqa/weights.hpp"

namespace kbqa::train {

struct TrainConfig {
  int embed = 200;
  int kb = 200;
  int hidden = 600;
  optim::AdamConfig adam;
  int batch_size = 32;
  int epochs = 30;
  loss::LossConfig loss;
  bool curriculum = false;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  int checkpoint_every = 0;  // extra epoch-NNN.ckpt every k epochs; 0 = off
  double validation_fraction = 0.1;
  std::size_t max_decode_length = 32;
  std::size_t min_word_count = 1;
  int hash_buckets = model::Lexicon::kDefaultHashBuckets;

  void validate() const;
};

std::string config_json(const TrainConfig& cfg);

/// One line of metrics.jsonl. Validation fields are absent when the
/// validation split is empty.
struct EpochRecord {
  int epoch = 0;
  int n_c = 0;
  int n_total = 0;
  std::size_t sampled_bags = 0;
  std::size_t batches = 0;
  double train_loss = 0.0;            // mean objective over the epoch's batches
  double train_nats_per_token = 0.0;  // over answers that carried gradient
  std::optional<double> val_accuracy, val_bleu2, val_rougeL;
  double grad_norm_max = 0.0;  // before clipping
};

std::string epoch_json(const EpochRecord& r);

/// Passed to the observer before each optimizer step.
struct BatchEvent {
  int epoch = 0;
  std::size_t batch = 0;
  std::span<const std::size_t> bag_indices;  // into TrainResult::train_bags order
  const model::ModelParams* params = nullptr;  // before the step
  double loss = 0.0;
  double clipped_norm = 0.0;  // global gradient norm after clipping
};

using Observer = std::function<void(const BatchEvent&)>;

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_log;
  std::vector<std::int64_t> train_bag_ids;       // after the validation split
  std::vector<std::int64_t> validation_bag_ids;
};

/// Trains on `bags` and writes best.ckpt, last.ckpt and metrics.jsonl into
/// `out_dir`. `weights` supplies precomputed consensus weights for the wgt
/// loss; without it they are computed from the configured scheme. A
/// non-finite loss aborts with NumericalError, leaving the last finite
/// checkpoint in place.
TrainResult train(const TrainConfig& cfg, const corpus::KnowledgeBase& kb, std::span<const corpus::QABag> bags,
                  const std::filesystem::path& out_dir,
                  const std::map<std::int64_t, loss::BagWeights>* weights = nullptr,
                  const Observer& observer = {});

/// Validation split: the first round(fraction * n) bags of a seeded shuffle.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double fraction,
                                                                                std::uint64_t seed);

/// Lexicon over the training part of `bags` (the validation split removed).
model::Lexicon build_lexicon(const TrainConfig& cfg, const corpus::KnowledgeBase& kb,
                             std::span<const corpus::QABag> bags);
/// The parameters training starts from.
model::ModelParams initial_params(const TrainConfig& cfg, const model::Lexicon& lex);

/// Greedy decoding of every bag; returns surface tokens.
std::vector<eval::Tokens> predict(const model::ModelParams& params, const model::Lexicon& lex,
                                  const corpus::KnowledgeBase& kb, std::span<const corpus::QABag> bags,
                                  std::size_t max_len);

/// Static consensus weights for every bag under `scheme`. The content
/// scheme encodes answers with `embeddings` (one column per word).
std::vector<loss::BagWeights> compute_weights(std::span<const corpus::QABag> bags, loss::Scheme scheme,
                                              loss::ZeroFallback fallback, const Vocabulary* words = nullptr,
                                              const Eigen::MatrixXd* embeddings = nullptr);

}  // namespace kbqa::train
