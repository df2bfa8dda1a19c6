#include "kbqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "kbqa/curriculum.hpp"
#include "kbqa/decoder.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::train {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t key, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key), tag};
  return std::mt19937_64(seq);
}

std::vector<corpus::QABag> pick(std::span<const corpus::QABag> bags, const std::vector<std::size_t>& idx) {
  std::vector<corpus::QABag> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(bags[i]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (embed <= 0 || kb <= 0 || hidden <= 0 || hidden % 2 != 0) {
    throw ConfigError("dims must be positive and the recurrent size even");
  }
  adam.validate();
  loss.validate();
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be non-negative");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
}

std::string config_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["dims"] = {cfg.embed, cfg.kb, cfg.hidden};
  j["adam"] = {{"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}};
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["loss"] = loss::to_string(cfg.loss.kind);
  j["alpha"] = cfg.loss.alpha;
  j["length_normalization"] = cfg.loss.length_normalization;
  j["weighting"] = loss::to_string(cfg.loss.weighting);
  j["zero_weight_fallback"] = loss::to_string(cfg.loss.fallback);
  j["curriculum"] = cfg.curriculum;
  j["seed"] = cfg.seed;
  j["clip_norm"] = cfg.clip_norm;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["validation_fraction"] = cfg.validation_fraction;
  j["max_decode_length"] = cfg.max_decode_length;
  j["min_word_count"] = cfg.min_word_count;
  j["hash_buckets"] = cfg.hash_buckets;
  return j.dump();
}

std::string epoch_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["n_c"] = r.n_c;
  j["n_total"] = r.n_total;
  j["sampled_bags"] = r.sampled_bags;
  j["batches"] = r.batches;
  j["train_loss"] = r.train_loss;
  j["train_nats_per_token"] = r.train_nats_per_token;
  j["grad_norm_max"] = r.grad_norm_max;
  if (r.val_accuracy) {
    j["val_accuracy"] = *r.val_accuracy;
    j["val_bleu2"] = *r.val_bleu2;
    j["val_rougeL"] = *r.val_rougeL;
  }
  return j.dump();
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double fraction,
                                                                                std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = stream(seed, 0, 0x76616c);
  std::shuffle(order.begin(), order.end(), rng);
  const auto nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(nval, n)));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(val.size()), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

model::Lexicon build_lexicon(const TrainConfig& cfg, const corpus::KnowledgeBase& kb,
                             std::span<const corpus::QABag> bags) {
  const auto [tr, val] = split_validation(bags.size(), cfg.validation_fraction, cfg.seed);
  const auto train_bags = pick(bags, tr);
  return model::Lexicon::build(kb, train_bags, cfg.min_word_count, cfg.hash_buckets);
}

model::ModelParams initial_params(const TrainConfig& cfg, const model::Lexicon& lex) {
  model::ModelDims d;
  d.embed = cfg.embed;
  d.kb = cfg.kb;
  d.hidden = cfg.hidden;
  d.vocab = static_cast<int>(lex.words().size());
  d.entity_rows = lex.entity_rows();
  d.predicate_rows = lex.predicate_rows();
  d.validate();
  return model::init_params(d, cfg.seed);
}

std::vector<eval::Tokens> predict(const model::ModelParams& params, const model::Lexicon& lex,
                                  const corpus::KnowledgeBase& kb, std::span<const corpus::QABag> bags,
                                  std::size_t max_len) {
  std::vector<eval::Tokens> out;
  out.reserve(bags.size());
  for (const auto& b : bags) {
    const auto in = model::prepare_bag(b, kb, lex);
    out.push_back(model::greedy_decode_tokens(in, lex, params, max_len));
  }
  return out;
}

std::vector<loss::BagWeights> compute_weights(std::span<const corpus::QABag> bags, loss::Scheme scheme,
                                              loss::ZeroFallback fallback, const Vocabulary* words,
                                              const Eigen::MatrixXd* embeddings) {
  std::vector<loss::BagWeights> out;
  out.reserve(bags.size());
  std::optional<loss::MeanEmbeddingEncoder> enc;
  if (scheme == loss::Scheme::kContent) {
    if (!words || !embeddings) throw ContractError("content weighting needs a vocabulary and embeddings");
    enc.emplace(*words, *embeddings);
  }
  for (const auto& b : bags) {
    switch (scheme) {
      case loss::Scheme::kKb: out.push_back(loss::kb_weights(b, fallback)); break;
      case loss::Scheme::kContent: out.push_back(loss::content_weights(b, *enc, fallback)); break;
      case loss::Scheme::kUniform: out.push_back(loss::uniform_weights(b)); break;
    }
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const corpus::KnowledgeBase& kb, std::span<const corpus::QABag> bags,
                  const std::filesystem::path& out_dir, const std::map<std::int64_t, loss::BagWeights>* weights,
                  const Observer& observer) {
  cfg.validate();
  if (bags.empty()) throw InputError("training needs at least one bag");
  std::filesystem::create_directories(out_dir);

  TrainResult res;
  const auto [tr_idx, val_idx] = split_validation(bags.size(), cfg.validation_fraction, cfg.seed);
  const auto train_bags = pick(bags, tr_idx);
  const auto val_bags = pick(bags, val_idx);
  for (const auto& b : train_bags) res.train_bag_ids.push_back(b.bag_id);
  for (const auto& b : val_bags) res.validation_bag_ids.push_back(b.bag_id);

  const auto lex = model::Lexicon::build(kb, train_bags, cfg.min_word_count, cfg.hash_buckets);
  auto params = initial_params(cfg, lex);
  auto grads = model::ModelParams::zeros_like(params);
  optim::Adam adam(params, cfg.adam);

  std::vector<loss::PreparedBag> prepared;
  prepared.reserve(train_bags.size());
  for (const auto& b : train_bags) prepared.push_back(loss::prepare(b, kb, lex));

  std::vector<loss::BagWeights> bag_weights;
  if (cfg.loss.kind == loss::LossKind::kWgt) {
    if (weights) {
      for (const auto& b : train_bags) {
        auto it = weights->find(b.bag_id);
        if (it == weights->end()) throw ConfigError("weights file has no record for bag_id " + std::to_string(b.bag_id));
        if (it->second.size() != b.answers.size()) {
          throw ContractError("bag_id " + std::to_string(b.bag_id) + ": weight vector length does not match its answers");
        }
        bag_weights.push_back(it->second);
      }
    } else {
      bag_weights = compute_weights(train_bags, cfg.loss.weighting, cfg.loss.fallback, &lex.words(), &params.word_emb);
    }
  }

  res.metrics_log = out_dir / "metrics.jsonl";
  res.last_checkpoint = out_dir / "last.ckpt";
  res.best_checkpoint = out_dir / "best.ckpt";
  std::ofstream log(res.metrics_log, std::ios::binary | std::ios::trunc);
  if (!log) throw LoadError("cannot write " + res.metrics_log.string());

  auto save = [&](const std::filesystem::path& path, int epoch) {
    nlohmann::ordered_json meta;
    meta["epoch"] = epoch;
    meta["config"] = nlohmann::ordered_json::parse(config_json(cfg));
    save_checkpoint(path, model::Checkpoint{params, lex, meta.dump()});
  };

  std::vector<std::size_t> counts;
  for (const auto& b : train_bags) counts.push_back(b.answers.size());
  std::optional<double> best_acc;
  // A divergence in the first epoch still leaves a finite checkpoint.
  save(res.last_checkpoint, 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.n_total = cfg.epochs;
    rec.n_c = epoch;
    std::vector<std::size_t> order;
    if (cfg.curriculum) {
      order = curriculum::sample_indices({cfg.epochs, epoch, cfg.seed}, counts);
    } else {
      order.resize(train_bags.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      auto rng = stream(cfg.seed, static_cast<std::uint64_t>(epoch), 0x65706f);
      std::shuffle(order.begin(), order.end(), rng);
    }
    rec.sampled_bags = order.size();

    double loss_sum = 0.0, nll_sum = 0.0;
    std::size_t token_sum = 0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      std::vector<const loss::PreparedBag*> batch;
      for (std::size_t i : idx) batch.push_back(&prepared[i]);
      grads.set_zero();
      loss::LossResult lr;
      try {
        switch (cfg.loss.kind) {
          case loss::LossKind::kNll: lr = loss::nll_loss(params, batch, &grads); break;
          case loss::LossKind::kSel:
            lr = loss::sel_loss(params, batch, &grads, cfg.loss.alpha, cfg.loss.length_normalization);
            break;
          case loss::LossKind::kWgt: {
            std::vector<const loss::BagWeights*> w;
            for (std::size_t i : idx) w.push_back(&bag_weights[i]);
            lr = loss::wgt_loss(params, batch, w, &grads);
            break;
          }
        }
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(rec.batches + 1) + " (" + e.what() + "); last finite checkpoint kept at " +
                             res.last_checkpoint.string());
      }
      const double norm = model::global_norm(grads);
      if (!std::isfinite(norm)) {
        throw NumericalError("non-finite gradient norm at epoch " + std::to_string(epoch) +
                             "; last finite checkpoint kept at " + res.last_checkpoint.string());
      }
      const double scale = optim::clip_scale(norm, cfg.clip_norm);
      rec.grad_norm_max = std::max(rec.grad_norm_max, norm);
      if (observer) {
        observer(BatchEvent{epoch, rec.batches, idx, &params, lr.loss, norm * scale});
      }
      if (!adam.step(params, grads, scale)) {
        throw NumericalError("parameters became non-finite at epoch " + std::to_string(epoch) +
                             "; last finite checkpoint kept at " + res.last_checkpoint.string());
      }
      loss_sum += lr.loss;
      nll_sum += lr.unweighted_nll;
      token_sum += lr.tokens;
      ++rec.batches;
    }
    rec.train_loss = rec.batches ? loss_sum / static_cast<double>(rec.batches) : 0.0;
    rec.train_nats_per_token = token_sum ? nll_sum / static_cast<double>(token_sum) : 0.0;

    if (!val_bags.empty()) {
      const auto preds = predict(params, lex, kb, val_bags, cfg.max_decode_length);
      const auto rep = eval::evaluate(preds, val_bags);
      rec.val_accuracy = rep.accuracy;
      rec.val_bleu2 = rep.bleu2;
      rec.val_rougeL = rep.rougeL;
    }

    save(res.last_checkpoint, epoch);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03d.ckpt", epoch);
      save(out_dir / name, epoch);
    }
    // Without a validation split every epoch counts as an improvement.
    if (!rec.val_accuracy || !best_acc || *rec.val_accuracy > *best_acc) {
      if (rec.val_accuracy) best_acc = rec.val_accuracy;
      res.best_epoch = epoch;
      std::filesystem::copy_file(res.last_checkpoint, res.best_checkpoint,
                                 std::filesystem::copy_options::overwrite_existing);
    }
    log << epoch_json(rec) << '\n';
    log.flush();
    res.epochs.push_back(std::move(rec));
  }
  return res;
}

}  // namespace kbqa::train
