#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kbqa/corpus.hpp"
#include "kbqa/evalmetrics.hpp"
#include "kbqa/trainer.hpp"

namespace kbqa::experiment {

/// A data directory as written by gen-data: kb.tsv, train.jsonl, test.jsonl.
struct Dataset {
  std::filesystem::path dir;
  corpus::KnowledgeBase kb;
  std::vector<corpus::QABag> train;
  std::vector<corpus::QABag> test;

  std::filesystem::path kb_path() const { return dir / "kb.tsv"; }
  std::filesystem::path train_path() const { return dir / "train.jsonl"; }
  std::filesystem::path test_path() const { return dir / "test.jsonl"; }
};

Dataset load_dataset(const std::filesystem::path& dir, bool with_test = true);

/// Parses "E,K,H".
void parse_dims(const std::string& s, train::TrainConfig& cfg);

/// One row of the comparison table.
struct SystemSpec {
  std::string id;
  std::string label;
  loss::LossConfig loss;
  bool curriculum = false;
};

/// nll, sel, sel-noln, wgt-content, wgt-kb, curriculum.
const std::vector<SystemSpec>& all_systems();
const SystemSpec& system_by_id(const std::string& id);

struct RunResult {
  std::string system;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  eval::EvalReport report;
};

struct SystemSummary {
  std::string system;
  std::string label;
  double accuracy = 0.0;  // medians over seeds
  double bleu2 = 0.0;
  double rougeL = 0.0;
  std::vector<RunResult> runs;
};

struct AblationConfig {
  train::TrainConfig base;
  std::vector<std::string> systems;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir;
  bool quiet = false;
};

/// Trains every system with every seed on `data.train` and evaluates the
/// best-validation checkpoint on `data.test`. Writes one directory per run
/// plus results.jsonl and table.md under `out_dir`.
std::vector<SystemSummary> run_ablation(const Dataset& data, const AblationConfig& cfg);

double median(std::vector<double> v);
std::string format_table(const std::vector<SystemSummary>& rows);

}  // namespace kbqa::experiment
