#include "experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "kbqa/checkpoint.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::experiment {

Dataset load_dataset(const std::filesystem::path& dir, bool with_test) {
  Dataset d;
  d.dir = dir;
  d.kb = corpus::load_kb(d.kb_path());
  d.train = corpus::load_bags(d.train_path(), d.kb);
  if (with_test) d.test = corpus::load_bags(d.test_path(), d.kb);
  return d;
}

void parse_dims(const std::string& s, train::TrainConfig& cfg) {
  int e = 0, k = 0, h = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d,%d,%d%c", &e, &k, &h, &tail) != 3) {
    throw ConfigError("--dims expects E,K,H (three integers), got '" + s + "'");
  }
  cfg.embed = e;
  cfg.kb = k;
  cfg.hidden = h;
}

const std::vector<SystemSpec>& all_systems() {
  static const std::vector<SystemSpec> systems = [] {
    std::vector<SystemSpec> v;
    loss::LossConfig l;
    l.kind = loss::LossKind::kNll;
    v.push_back({"nll", "CoreQA (NLL)", l, false});
    l.kind = loss::LossKind::kSel;
    v.push_back({"sel", "Selection", l, false});
    l.length_normalization = false;
    v.push_back({"sel-noln", "Selection -LengthNrm", l, false});
    l.length_normalization = true;
    l.kind = loss::LossKind::kWgt;
    l.weighting = loss::Scheme::kContent;
    v.push_back({"wgt-content", "Weight: Content", l, false});
    l.weighting = loss::Scheme::kKb;
    v.push_back({"wgt-kb", "Weight: KB", l, false});
    v.push_back({"curriculum", "Curriculum (Weight: KB)", l, true});
    return v;
  }();
  return systems;
}

const SystemSpec& system_by_id(const std::string& id) {
  for (const auto& s : all_systems()) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown system '" + id + "'");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<SystemSummary> run_ablation(const Dataset& data, const AblationConfig& cfg) {
  if (cfg.systems.empty() || cfg.seeds.empty()) throw ConfigError("ablation needs systems and seeds");
  if (data.test.empty()) throw InputError("ablation needs a test split");
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream results(cfg.out_dir / "results.jsonl", std::ios::binary | std::ios::trunc);
  std::vector<SystemSummary> out;
  for (const auto& id : cfg.systems) {
    const auto& spec = system_by_id(id);
    SystemSummary sum;
    sum.system = spec.id;
    sum.label = spec.label;
    std::vector<double> acc, bleu, rouge;
    for (auto seed : cfg.seeds) {
      auto tc = cfg.base;
      tc.loss = spec.loss;
      tc.curriculum = spec.curriculum;
      tc.seed = seed;
      const auto dir = cfg.out_dir / spec.id / ("seed-" + std::to_string(seed));
      const auto t0 = std::chrono::steady_clock::now();
      const auto tr = train::train(tc, data.kb, data.train, dir);
      const auto ck = model::load_checkpoint(tr.best_checkpoint);
      const auto preds = train::predict(ck.params, ck.lexicon, data.kb, data.test, tc.max_decode_length);
      RunResult r;
      r.system = spec.id;
      r.seed = seed;
      r.best_epoch = tr.best_epoch;
      r.report = eval::evaluate(preds, data.test);
      {
        std::ofstream rep(dir / "test_report.jsonl", std::ios::binary | std::ios::trunc);
        rep << eval::report_json(r.report) << '\n';
      }
      nlohmann::ordered_json j;
      j["system"] = spec.id;
      j["seed"] = seed;
      j["best_epoch"] = r.best_epoch;
      j["accuracy"] = r.report.accuracy;
      j["bleu2"] = r.report.bleu2;
      j["rougeL"] = r.report.rougeL;
      results << j.dump() << '\n';
      results.flush();
      if (!cfg.quiet) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "%-12s seed %-4llu acc %6.2f  bleu2 %6.2f  rougeL %6.2f  (best epoch %d, %.0fs)\n",
                     spec.id.c_str(), static_cast<unsigned long long>(seed), 100 * r.report.accuracy,
                     100 * r.report.bleu2, 100 * r.report.rougeL, r.best_epoch, secs);
      }
      acc.push_back(r.report.accuracy);
      bleu.push_back(r.report.bleu2);
      rouge.push_back(r.report.rougeL);
      sum.runs.push_back(std::move(r));
    }
    sum.accuracy = median(acc);
    sum.bleu2 = median(bleu);
    sum.rougeL = median(rouge);
    out.push_back(std::move(sum));
  }
  std::ofstream table(cfg.out_dir / "table.md", std::ios::binary | std::ios::trunc);
  table << format_table(out);
  return out;
}

std::string format_table(const std::vector<SystemSummary>& rows) {
  std::ostringstream os;
  os << "| System | Accuracy | BLEU-2 | ROUGE-L |\n|---|---:|---:|---:|\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %.2f | %.2f | %.2f |\n", r.label.c_str(), 100 * r.accuracy, 100 * r.bleu2,
                  100 * r.rougeL);
    os << buf;
  }
  if (!rows.empty() && rows.front().runs.size() > 1) {
    os << "\nMedians over " << rows.front().runs.size() << " training seeds.\n";
  }
  return os.str();
}

}  // namespace kbqa::experiment
