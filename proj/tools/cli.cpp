#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "experiment.hpp"
#include "json.hpp"
#include "kbqa/checkpoint.hpp"
#include "kbqa/errors.hpp"
#include "kbqa/manifest.hpp"
#include "kbqa/synthgen.hpp"
#include "kbqa/weights.hpp"

namespace kbqa::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Common {
  std::string data;
  std::string out;
};

ExperimentManifest manifest_for(const std::string& command, const std::vector<std::string>& args) {
  ExperimentManifest m;
  m.command = command;
  m.argv = args;
  return m;
}

void add_dataset_inputs(ExperimentManifest& m, const experiment::Dataset& d, bool with_test) {
  m.add_input(d.kb_path());
  m.add_input(d.train_path());
  if (with_test) m.add_input(d.test_path());
}

std::string join(const std::vector<std::string>& v, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

const corpus::QABag* find_bag(const std::vector<corpus::QABag>& bags, std::int64_t id) {
  for (const auto& b : bags) {
    if (b.bag_id == id) return &b;
  }
  return nullptr;
}

void print_mentions(std::ostream& os, const corpus::Utterance& u, const char* indent) {
  for (const auto& m : u.mentions) {
    os << indent << "[" << m.begin << "," << m.end << ") \"" << m.entity << "\" "
       << (m.role == corpus::MentionRole::kObject ? "object" : "subject");
    if (m.triple_id) os << " of triple " << *m.triple_id;
    os << "\n";
  }
}

// Training flags shared by train and ablate.
struct TrainFlags {
  std::string dims = "200,200,600";
  int epochs = 30;
  int batch = 32;
  double lr = 1e-3;
  double clip = 5.0;
  double validation_fraction = 0.1;
  std::size_t max_len = 32;

  void add(CLI::App* app) {
    app->add_option("--dims", dims, "Embedding, KB and recurrent sizes as E,K,H")->capture_default_str();
    app->add_option("--epochs", epochs, "Number of epochs N")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--batch", batch, "Bags per optimizer step")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--clip", clip, "Global gradient-norm clip")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--validation-fraction", validation_fraction, "Share of training bags held out")
        ->capture_default_str();
    app->add_option("--max-len", max_len, "Greedy decoding length limit")->capture_default_str();
  }

  train::TrainConfig config() const {
    train::TrainConfig c;
    experiment::parse_dims(dims, c);
    c.epochs = epochs;
    c.batch_size = batch;
    c.adam.lr = lr;
    c.clip_norm = clip;
    c.validation_fraction = validation_fraction;
    c.max_decode_length = max_len;
    return c;
  }
};

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Multi-instance KBQA training toolkit", "kbqa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // gen-data
  synth::GenConfig gen;
  std::string gen_out, gen_predicates;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic KB and question bags");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--bags", gen.num_bags, "Number of bags (train + test)")->capture_default_str();
  gen_cmd->add_option("--entities", gen.num_entities, "Number of subject entities")->capture_default_str();
  gen_cmd->add_option("--predicates", gen_predicates, "Comma-separated relation names");
  gen_cmd->add_option("--values-per-predicate", gen.values_per_predicate, "Size of each value pool")
      ->capture_default_str();
  gen_cmd->add_option("--answers-mean", gen.answers_per_bag_mean, "Mean answers per bag")->capture_default_str();
  gen_cmd->add_option("--p-irrelevant", gen.p_irrelevant, "Rate of irrelevant answers")->capture_default_str();
  gen_cmd->add_option("--p-inconsistent", gen.p_inconsistent, "Rate of inconsistent answers")->capture_default_str();
  gen_cmd->add_option("--irrelevant-skew", gen.irrelevant_skew, "Spread of the irrelevant rate across relations")
      ->capture_default_str();
  gen_cmd->add_option("--single-noise-scale", gen.single_noise_scale,
                      "Noise-rate multiplier for single-answer bags")
      ->capture_default_str();
  gen_cmd->add_option("--p-multi-value", gen.p_multi_value, "Probability a fact has two values")
      ->capture_default_str();
  gen_cmd->add_option("--noise-tokens", gen.vocab_noise_tokens, "Filler vocabulary size")->capture_default_str();
  gen_cmd->add_option("--train-fraction", gen.train_fraction, "Share of bags in train.jsonl")->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();

  // weigh
  Common weigh;
  std::string weigh_scheme = "kb", weigh_fallback = "uniform", weigh_dims = "200,200,600";
  std::uint64_t weigh_seed = 1;
  double weigh_val = 0.1;
  auto* weigh_cmd = app.add_subcommand("weigh", "Precompute consensus weights for the training bags");
  weigh_cmd->add_option("--data", weigh.data, "Data directory")->required();
  weigh_cmd->add_option("--weighting", weigh_scheme, "kb, content or uniform")
      ->capture_default_str()
      ->check(CLI::IsMember({"kb", "content", "uniform"}));
  weigh_cmd->add_option("--fallback", weigh_fallback, "Zero-weight fallback: uniform or drop-bag")
      ->capture_default_str()
      ->check(CLI::IsMember({"uniform", "drop-bag"}));
  weigh_cmd->add_option("--seed", weigh_seed, "Seed of the training run (content weighting)")->capture_default_str();
  weigh_cmd->add_option("--dims", weigh_dims, "Dims of the training run (content weighting)")->capture_default_str();
  weigh_cmd->add_option("--validation-fraction", weigh_val, "Validation share of the training run")
      ->capture_default_str();
  weigh_cmd->add_option("--out", weigh.out, "Output directory")->required();

  // train
  Common tr;
  TrainFlags tf;
  std::string tr_loss = "nll", tr_weighting = "kb", tr_fallback = "uniform", tr_curriculum = "off", tr_weights;
  std::uint64_t tr_seed = 1;
  double tr_alpha = 0.6;
  bool tr_no_ln = false, tr_single = false;
  int tr_ckpt_every = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", tr.data, "Data directory")->required();
  train_cmd->add_option("--loss", tr_loss, "nll, sel or wgt")
      ->capture_default_str()
      ->check(CLI::IsMember({"nll", "sel", "wgt"}));
  train_cmd->add_option("--weighting", tr_weighting, "kb, content or uniform (wgt loss)")
      ->capture_default_str()
      ->check(CLI::IsMember({"kb", "content", "uniform"}));
  train_cmd->add_option("--fallback", tr_fallback, "Zero-weight fallback: uniform or drop-bag")
      ->capture_default_str()
      ->check(CLI::IsMember({"uniform", "drop-bag"}));
  train_cmd->add_option("--weights", tr_weights, "Precomputed weights file from `weigh`");
  train_cmd->add_option("--alpha", tr_alpha, "Length-normalization exponent")->capture_default_str();
  train_cmd->add_flag("--no-length-norm", tr_no_ln, "Select by raw log-likelihood (sel loss)");
  train_cmd->add_option("--curriculum", tr_curriculum, "on or off")
      ->capture_default_str()
      ->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--seed", tr_seed, "Training seed")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tr_ckpt_every, "Extra checkpoint every k epochs (0 = off)")
      ->capture_default_str();
  train_cmd->add_flag("--single-thread", tr_single, "Single-threaded execution (always the case)");
  tf.add(train_cmd);
  train_cmd->add_option("--out", tr.out, "Output directory")->required();

  // eval
  Common ev;
  std::string ev_ckpt, ev_split = "test";
  int ev_boot = 1000;
  std::uint64_t ev_boot_seed = 0;
  std::size_t ev_max_len = 32;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--data", ev.data, "Data directory")->required();
  eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--split", ev_split, "train or test")->capture_default_str()->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--bootstrap", ev_boot, "Bootstrap resamples (0 = off)")->capture_default_str();
  eval_cmd->add_option("--bootstrap-seed", ev_boot_seed, "Bootstrap seed")->capture_default_str();
  eval_cmd->add_option("--max-len", ev_max_len, "Greedy decoding length limit")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();

  // predict
  Common pr;
  std::string pr_ckpt, pr_split = "test";
  std::size_t pr_max_len = 32;
  auto* predict_cmd = app.add_subcommand("predict", "Decode answers for every bag of a split");
  predict_cmd->add_option("--data", pr.data, "Data directory")->required();
  predict_cmd->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("--split", pr_split, "train or test")->capture_default_str()->check(CLI::IsMember({"train", "test"}));
  predict_cmd->add_option("--max-len", pr_max_len, "Greedy decoding length limit")->capture_default_str();
  predict_cmd->add_option("--out", pr.out, "Output directory")->required();

  // inspect-bag
  Common ib;
  std::int64_t ib_id = 0;
  auto* inspect_cmd = app.add_subcommand("inspect-bag", "Show one bag with its KB weights and mentions");
  inspect_cmd->add_option("--data", ib.data, "Data directory")->required();
  inspect_cmd->add_option("--id", ib_id, "bag_id")->required();
  inspect_cmd->add_option("--out", ib.out, "Optional directory for a copy of the listing and a manifest");

  // ablate
  Common ab;
  TrainFlags af;
  std::vector<std::string> ab_systems = {"nll", "sel", "sel-noln", "wgt-content", "wgt-kb", "curriculum"};
  std::vector<std::uint64_t> ab_seeds = {1, 2, 3};
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare the loss/weighting/curriculum grid");
  ablate_cmd->add_option("--data", ab.data, "Data directory")->required();
  ablate_cmd->add_option("--systems", ab_systems, "Systems to run")
      ->delimiter(',')
      ->capture_default_str()
      ->check(CLI::IsMember({"nll", "sel", "sel-noln", "wgt-content", "wgt-kb", "curriculum"}));
  ablate_cmd->add_option("--seeds", ab_seeds, "Training seeds")->delimiter(',')->capture_default_str();
  af.add(ablate_cmd);
  ablate_cmd->add_option("--out", ab.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "kbqa: usage error: " << e.what() << " (see --help)\n";
    return kExitUsage;
  }

  try {
    if (*gen_cmd) {
      if (!gen_predicates.empty()) {
        gen.predicates.clear();
        std::stringstream ss(gen_predicates);
        for (std::string p; std::getline(ss, p, ',');) gen.predicates.push_back(p);
      }
      const auto corpus = synth::generate(gen);
      const fs::path out(gen_out);
      synth::write_corpus(out, corpus, gen);
      auto m = manifest_for("gen-data", args);
      m.seed = gen.seed;
      m.config_json = synth::config_to_json(gen);
      m.outputs = {"kb.tsv", "train.jsonl", "test.jsonl", "provenance.jsonl", "gen_config.json"};
      write_manifest(out / "manifest.json", m);
      std::cout << "wrote " << corpus.kb.size() << " triples, " << corpus.train.size() << " train bags, "
                << corpus.test.size() << " test bags to " << out.string() << "\n";
      return kExitOk;
    }

    if (*weigh_cmd) {
      const auto data = experiment::load_dataset(weigh.data, false);
      const auto scheme = loss::scheme_from_string(weigh_scheme);
      const auto fallback = loss::fallback_from_string(weigh_fallback);
      std::vector<loss::BagWeights> w;
      train::TrainConfig tc;
      experiment::parse_dims(weigh_dims, tc);
      tc.seed = weigh_seed;
      tc.validation_fraction = weigh_val;
      if (scheme == loss::Scheme::kContent) {
        const auto lex = train::build_lexicon(tc, data.kb, data.train);
        const auto params = train::initial_params(tc, lex);
        w = train::compute_weights(data.train, scheme, fallback, &lex.words(), &params.word_emb);
      } else {
        w = train::compute_weights(data.train, scheme, fallback);
      }
      const fs::path out(weigh.out);
      fs::create_directories(out);
      loss::save_weights(out / "weights.jsonl", w);
      std::size_t fb = 0, dropped = 0;
      for (const auto& x : w) {
        fb += x.fallback;
        dropped += x.dropped;
      }
      auto m = manifest_for("weigh", args);
      m.seed = weigh_seed;
      ordered_json cfg;
      cfg["weighting"] = weigh_scheme;
      cfg["fallback"] = weigh_fallback;
      cfg["dims"] = weigh_dims;
      cfg["validation_fraction"] = weigh_val;
      m.config_json = cfg.dump();
      add_dataset_inputs(m, data, false);
      m.outputs = {"weights.jsonl"};
      write_manifest(out / "manifest.json", m);
      std::cout << "weighed " << w.size() << " bags (" << fb << " zero-weight fallbacks, " << dropped
                << " dropped) -> " << (out / "weights.jsonl").string() << "\n";
      return kExitOk;
    }

    if (*train_cmd) {
      auto tc = tf.config();
      const auto data = experiment::load_dataset(tr.data, false);
      tc.loss.kind = loss::loss_from_string(tr_loss);
      tc.loss.weighting = loss::scheme_from_string(tr_weighting);
      tc.loss.fallback = loss::fallback_from_string(tr_fallback);
      tc.loss.alpha = tr_alpha;
      tc.loss.length_normalization = !tr_no_ln;
      tc.curriculum = tr_curriculum == "on";
      tc.seed = tr_seed;
      tc.checkpoint_every = tr_ckpt_every;
      std::map<std::int64_t, loss::BagWeights> weights;
      if (!tr_weights.empty()) weights = loss::load_weights(tr_weights);
      const fs::path out(tr.out);
      const auto res = train::train(tc, data.kb, data.train, out, tr_weights.empty() ? nullptr : &weights);
      for (const auto& e : res.epochs) std::cout << train::epoch_json(e) << "\n";
      auto m = manifest_for("train", args);
      m.seed = tc.seed;
      m.config_json = train::config_json(tc);
      add_dataset_inputs(m, data, false);
      if (!tr_weights.empty()) m.add_input(tr_weights);
      m.outputs = {"metrics.jsonl", "best.ckpt", "last.ckpt"};
      write_manifest(out / "manifest.json", m);
      std::cout << "best epoch " << res.best_epoch << ", checkpoint " << res.best_checkpoint.string() << "\n";
      return kExitOk;
    }

    if (*eval_cmd) {
      const auto data = experiment::load_dataset(ev.data, true);
      const auto ck = model::load_checkpoint(ev_ckpt);
      const auto& bags = ev_split == "test" ? data.test : data.train;
      const auto preds = train::predict(ck.params, ck.lexicon, data.kb, bags, ev_max_len);
      auto rep = eval::evaluate(preds, bags);
      if (ev_boot > 0) eval::bootstrap(rep, ev_boot, ev_boot_seed);
      const fs::path out(ev.out);
      fs::create_directories(out);
      {
        std::ofstream f(out / "report.jsonl", std::ios::binary | std::ios::trunc);
        f << eval::report_json(rep) << '\n';
        std::ofstream q(out / "per_question.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& r : rep.per_question) {
          ordered_json j;
          j["bag_id"] = r.bag_id;
          j["prediction"] = r.prediction;
          j["hit"] = r.hit ? ordered_json(*r.hit) : ordered_json();
          j["rougeL"] = r.rouge;
          q << j.dump() << '\n';
        }
        std::ofstream t(out / "report.txt", std::ios::binary | std::ios::trunc);
        t << eval::report_table(rep);
      }
      auto m = manifest_for("eval", args);
      m.seed = ev_boot_seed;
      ordered_json cfg;
      cfg["split"] = ev_split;
      cfg["bootstrap"] = ev_boot;
      cfg["max_len"] = ev_max_len;
      m.config_json = cfg.dump();
      add_dataset_inputs(m, data, true);
      m.add_input(ev_ckpt);
      m.outputs = {"report.jsonl", "per_question.jsonl", "report.txt"};
      write_manifest(out / "manifest.json", m);
      std::cout << eval::report_table(rep);
      return kExitOk;
    }

    if (*predict_cmd) {
      const auto data = experiment::load_dataset(pr.data, true);
      const auto ck = model::load_checkpoint(pr_ckpt);
      const auto& bags = pr_split == "test" ? data.test : data.train;
      const auto preds = train::predict(ck.params, ck.lexicon, data.kb, bags, pr_max_len);
      const fs::path out(pr.out);
      fs::create_directories(out);
      std::ofstream f(out / "predictions.jsonl", std::ios::binary | std::ios::trunc);
      for (std::size_t i = 0; i < bags.size(); ++i) {
        ordered_json j;
        j["bag_id"] = bags[i].bag_id;
        j["question"] = bags[i].question.tokens;
        j["prediction"] = preds[i];
        f << j.dump() << '\n';
      }
      auto m = manifest_for("predict", args);
      ordered_json cfg;
      cfg["split"] = pr_split;
      cfg["max_len"] = pr_max_len;
      m.config_json = cfg.dump();
      add_dataset_inputs(m, data, true);
      m.add_input(pr_ckpt);
      m.outputs = {"predictions.jsonl"};
      write_manifest(out / "manifest.json", m);
      std::cout << "wrote " << bags.size() << " predictions to " << (out / "predictions.jsonl").string() << "\n";
      return kExitOk;
    }

    if (*inspect_cmd) {
      const auto data = experiment::load_dataset(ib.data, true);
      const corpus::QABag* bag = find_bag(data.train, ib_id);
      const char* split = "train";
      if (!bag) {
        bag = find_bag(data.test, ib_id);
        split = "test";
      }
      if (!bag) throw InputError("bag_id " + std::to_string(ib_id) + " not found in " + ib.data);
      std::map<std::int64_t, std::vector<synth::AnswerLabel>> prov;
      if (fs::exists(fs::path(ib.data) / "provenance.jsonl")) prov = synth::load_provenance(fs::path(ib.data) / "provenance.jsonl");
      const auto w = loss::kb_weights(*bag);
      std::ostringstream os;
      os << "bag " << bag->bag_id << " (" << split << ", " << (bag->single_instance() ? "single" : "multi")
         << "-instance, " << bag->answers.size() << " answers)\n";
      os << "question: " << join(bag->question.tokens) << "\n";
      print_mentions(os, bag->question, "  mention ");
      os << "facts:\n";
      for (int id : bag->facts) {
        const auto& f = data.kb.at(id);
        os << "  #" << id << "  " << f.subject << " | " << f.predicate << " | " << f.object << "\n";
      }
      os << "answers (KB weight C, C/Z with Z = " << w.z << (w.fallback ? ", zero-sum fallback applied" : "") << "):\n";
      for (std::size_t i = 0; i < bag->answers.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  [%zu] C=%g (%.3f) ", i, w.weights[i], w.normalized(i));
        os << buf << join(bag->answers[i].tokens);
        auto it = prov.find(bag->bag_id);
        if (it != prov.end() && i < it->second.size()) os << "   <" << synth::to_string(it->second[i]) << ">";
        os << "\n";
        print_mentions(os, bag->answers[i], "      mention ");
      }
      std::cout << os.str();
      if (!ib.out.empty()) {
        const fs::path out(ib.out);
        fs::create_directories(out);
        std::ofstream f(out / ("bag-" + std::to_string(ib_id) + ".txt"), std::ios::binary | std::ios::trunc);
        f << os.str();
        auto m = manifest_for("inspect-bag", args);
        add_dataset_inputs(m, data, true);
        m.outputs = {"bag-" + std::to_string(ib_id) + ".txt"};
        write_manifest(out / "manifest.json", m);
      }
      return kExitOk;
    }

    if (*ablate_cmd) {
      experiment::AblationConfig cfg;
      cfg.base = af.config();
      const auto data = experiment::load_dataset(ab.data, true);
      cfg.systems = ab_systems;
      cfg.seeds = ab_seeds;
      cfg.out_dir = ab.out;
      const auto rows = experiment::run_ablation(data, cfg);
      auto m = manifest_for("ablate", args);
      m.config_json = train::config_json(cfg.base);
      add_dataset_inputs(m, data, true);
      m.outputs = {"results.jsonl", "table.md"};
      write_manifest(fs::path(ab.out) / "manifest.json", m);
      std::cout << experiment::format_table(rows);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "kbqa: configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "kbqa: error: " << e.what() << "\n";
    return kExitDataError;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace kbqa::cli
