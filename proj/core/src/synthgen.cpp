#include "kbqa/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::synth {

namespace {

constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ren", "su", "ta", "vo", "zen", "pa", "qi",
                                      "dar", "el", "fu", "gor", "hal", "jin", "ko", "lu", "mar", "nor",
                                      "os", "pel", "ri", "sa", "tor", "ul", "ven", "wy", "xa", "yo"};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t key, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

class NameMaker {
 public:
  explicit NameMaker(std::set<std::string> reserved) : used_(std::move(reserved)) {}

  std::string make(std::mt19937_64& rng, int min_syl, int max_syl, bool capitalize) {
    std::uniform_int_distribution<int> nsyl(min_syl, max_syl);
    std::uniform_int_distribution<std::size_t> pick(0, std::size(kSyllables) - 1);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::string s;
      const int n = nsyl(rng) + attempt / 1000;
      for (int i = 0; i < n; ++i) s += kSyllables[pick(rng)];
      if (capitalize) s[0] = static_cast<char>(s[0] - 'a' + 'A');
      if (used_.insert(s).second) return s;
    }
    throw ConfigError("could not generate enough distinct names");
  }

 private:
  std::set<std::string> used_;
};

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '_' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Expands a template; {s}, {p}, {o} are substituted by token lists.
std::vector<std::string> realize(const std::string& tmpl, const std::vector<std::string>& subj,
                                 const std::vector<std::string>& pred, const std::vector<std::string>& obj) {
  std::vector<std::string> out;
  for (const auto& tok : corpus::tokenize(tmpl).tokens) {
    const std::vector<std::string>* sub = nullptr;
    if (tok == "{s}") sub = &subj;
    if (tok == "{p}") sub = &pred;
    if (tok == "{o}") sub = &obj;
    if (sub) {
      out.insert(out.end(), sub->begin(), sub->end());
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

std::set<std::string> template_words() {
  std::set<std::string> words;
  auto add = [&](const std::vector<std::string>& ts) {
    for (const auto& t : ts)
      for (const auto& w : corpus::tokenize(t).tokens) words.insert(w);
  };
  add(question_templates());
  add(answer_templates());
  add(inconsistent_templates());
  add(generic_openers());
  words.insert("and");
  return words;
}

struct EntityFacts {
  std::string name;
  std::vector<std::vector<std::string>> values;  // per predicate, 1 or 2 values
};

}  // namespace

const char* to_string(AnswerLabel label) {
  switch (label) {
    case AnswerLabel::kCorrect: return "correct";
    case AnswerLabel::kInconsistent: return "inconsistent";
    case AnswerLabel::kIrrelevant: return "irrelevant";
  }
  return "?";
}

AnswerLabel label_from_string(const std::string& s) {
  if (s == "correct") return AnswerLabel::kCorrect;
  if (s == "inconsistent") return AnswerLabel::kInconsistent;
  if (s == "irrelevant") return AnswerLabel::kIrrelevant;
  throw LoadError("unknown provenance label '" + s + "'");
}

const std::vector<std::string>& question_templates() {
  static const std::vector<std::string> t = {
      "what is the {p} of {s}", "do you know the {p} of {s}", "{s} 's {p} is what",
      "tell me the {p} of {s}", "which {p} does {s} have"};
  return t;
}

const std::vector<std::string>& answer_templates() {
  static const std::vector<std::string> t = {
      "{o}",           "it is {o}",       "the {p} of {s} is {o}", "i think it is {o}",
      "{s} 's {p} is {o}", "{o} of course", "maybe {o}",             "that would be {o}"};
  return t;
}

const std::vector<std::string>& inconsistent_templates() {
  static const std::vector<std::string> t = {"the {p} of {s} is {o}", "{s} 's {p} is {o}"};
  return t;
}

const std::vector<std::string>& generic_openers() {
  static const std::vector<std::string> t = {"check the history book yourself", "search it online",
                                             "no idea sorry"};
  return t;
}

void GenConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(p_irrelevant, "p_irrelevant");
  prob(p_inconsistent, "p_inconsistent");
  prob(p_multi_value, "p_multi_value");
  prob(irrelevant_skew, "irrelevant_skew");
  prob(single_noise_scale, "single_noise_scale");
  if (p_irrelevant + p_inconsistent > 1.0) throw ConfigError("p_irrelevant + p_inconsistent exceeds 1");
  if (!(answers_per_bag_mean >= 1.0)) throw ConfigError("answers_per_bag_mean must be >= 1");
  const double skew = predicates.size() > 1 ? irrelevant_skew : 0.0;
  if ((p_irrelevant * (1.0 + skew) + p_inconsistent) * noise_factor(*this, 2) > 1.0) {
    throw ConfigError("noise rates exceed 1 for some relation once skew and bag-size scaling are applied");
  }
  if (num_entities <= 0 || num_bags <= 0 || values_per_predicate <= 0 || vocab_noise_tokens <= 0) {
    throw ConfigError("counts must be positive");
  }
  if (predicates.empty()) throw ConfigError("need at least one predicate");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (p_inconsistent > 0.0 && (num_entities < 2 || values_per_predicate < 2)) {
    throw ConfigError("inconsistent answers need at least 2 entities and 2 values per predicate");
  }
  if (p_multi_value > 0.0 && values_per_predicate < 2) {
    throw ConfigError("multi-value predicates need at least 2 values per predicate");
  }
  if (num_entities < 2) throw ConfigError("the train/test split needs at least 2 entities");
  std::set<std::string> seen;
  for (const auto& p : predicates) {
    if (split_words(p).empty() || !seen.insert(p).second) throw ConfigError("bad or duplicate predicate '" + p + "'");
  }
}

double noise_factor(const GenConfig& cfg, int n_answers) {
  // Share of all answers that sit in single-answer bags under 1 + Poisson(mean - 1).
  const double share = std::exp(-(cfg.answers_per_bag_mean - 1.0)) / cfg.answers_per_bag_mean;
  if (share >= 1.0) return 1.0;
  if (n_answers == 1) return cfg.single_noise_scale;
  return (1.0 - share * cfg.single_noise_scale) / (1.0 - share);
}

double irrelevant_rate(const GenConfig& cfg, std::size_t index) {
  const std::size_t n = cfg.predicates.size();
  if (2 * index + 1 == n) return cfg.p_irrelevant;
  return cfg.p_irrelevant * (2 * index < n ? 1.0 + cfg.irrelevant_skew : 1.0 - cfg.irrelevant_skew);
}

GeneratedCorpus generate(const GenConfig& cfg) {
  cfg.validate();
  GeneratedCorpus out;
  const std::size_t np = cfg.predicates.size();

  // Vocabulary of names.
  auto rng = stream(cfg.seed, 0, 1);
  NameMaker names(template_words());
  std::vector<std::vector<std::string>> pools(np);
  for (std::size_t p = 0; p < np; ++p) {
    for (int v = 0; v < cfg.values_per_predicate; ++v) pools[p].push_back(names.make(rng, 2, 2, false));
  }
  std::vector<std::string> noise;
  for (int i = 0; i < cfg.vocab_noise_tokens; ++i) noise.push_back(names.make(rng, 1, 2, false));

  // Correct answers pick a template uniformly; stock generic replies are
  // concentrated on the first opener.
  std::uniform_int_distribution<std::size_t> style(0, answer_templates().size() - 1);

  // Entities and the KB, entity-major.
  std::vector<EntityFacts> entities(static_cast<std::size_t>(cfg.num_entities));
  for (auto& e : entities) {
    e.name = names.make(rng, 2, 3, true);
    e.values.resize(np);
    for (std::size_t p = 0; p < np; ++p) {
      std::uniform_int_distribution<std::size_t> pick(0, pools[p].size() - 1);
      const std::size_t first = pick(rng);
      e.values[p].push_back(pools[p][first]);
      if (std::bernoulli_distribution(cfg.p_multi_value)(rng)) {
        std::size_t second = pick(rng);
        while (second == first) second = pick(rng);
        e.values[p].push_back(pools[p][second]);
      }
    }
  }
  for (const auto& e : entities) {
    for (std::size_t p = 0; p < np; ++p) {
      for (const auto& v : e.values[p]) out.kb.add(e.name, cfg.predicates[p], v);
    }
  }

  // Bags, each from its own stream.
  std::vector<corpus::QABag> bags;
  std::vector<std::size_t> bag_subject;
  std::discrete_distribution<std::size_t> generic_pick({0.6, 0.25, 0.15});
  for (int k = 0; k < cfg.num_bags; ++k) {
    auto br = stream(cfg.seed, static_cast<std::uint64_t>(k), 2);
    const std::size_t si = std::uniform_int_distribution<std::size_t>(0, entities.size() - 1)(br);
    const std::size_t pi = std::uniform_int_distribution<std::size_t>(0, np - 1)(br);
    const auto& ent = entities[si];
    const std::vector<std::string> subj{ent.name};
    const std::vector<std::string> pred = split_words(cfg.predicates[pi]);
    const auto& truth = ent.values[pi];

    corpus::QABag bag;
    bag.bag_id = k;
    auto facts = out.kb.facts_of(ent.name);
    bag.facts.assign(facts.begin(), facts.end());
    const auto& qt = question_templates();
    bag.question.tokens = realize(qt[std::uniform_int_distribution<std::size_t>(0, qt.size() - 1)(br)], subj, pred, {});

    std::poisson_distribution<int> extra(cfg.answers_per_bag_mean - 1.0);
    const int n_answers = 1 + (cfg.answers_per_bag_mean > 1.0 ? extra(br) : 0);
    std::vector<AnswerLabel> labels;
    const double scale = noise_factor(cfg, n_answers);
    const double p_irr = irrelevant_rate(cfg, pi) * scale;
    const double p_inc = cfg.p_inconsistent * scale;
    for (int a = 0; a < n_answers; ++a) {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(br);
      corpus::Utterance ans;
      if (u < p_irr) {
        labels.push_back(AnswerLabel::kIrrelevant);
        ans.tokens = corpus::tokenize(generic_openers()[generic_pick(br)]).tokens;
        const int k_noise = std::uniform_int_distribution<int>(0, 3)(br);
        for (int i = 0; i < k_noise; ++i) {
          ans.tokens.push_back(noise[std::uniform_int_distribution<std::size_t>(0, noise.size() - 1)(br)]);
        }
      } else if (u < p_irr + p_inc) {
        labels.push_back(AnswerLabel::kInconsistent);
        std::string wrong;
        for (int attempt = 0; attempt < 64 && wrong.empty(); ++attempt) {
          const std::size_t other = std::uniform_int_distribution<std::size_t>(0, entities.size() - 1)(br);
          if (other == si) continue;
          for (const auto& v : entities[other].values[pi]) {
            if (std::find(truth.begin(), truth.end(), v) == truth.end()) {
              wrong = v;
              break;
            }
          }
        }
        if (wrong.empty()) {
          for (const auto& v : pools[pi]) {
            if (std::find(truth.begin(), truth.end(), v) == truth.end()) {
              wrong = v;
              break;
            }
          }
        }
        const auto& it = inconsistent_templates();
        ans.tokens = realize(it[std::uniform_int_distribution<std::size_t>(0, it.size() - 1)(br)], subj, pred, {wrong});
      } else {
        labels.push_back(AnswerLabel::kCorrect);
        std::vector<std::string> obj;
        if (truth.size() == 1) {
          obj = truth;
        } else if (std::bernoulli_distribution(0.5)(br)) {
          obj = {truth[0], "and", truth[1]};
        } else {
          obj = {truth[std::uniform_int_distribution<std::size_t>(0, truth.size() - 1)(br)]};
        }
        ans.tokens = realize(answer_templates()[style(br)], subj, pred, obj);
      }
      bag.answers.push_back(std::move(ans));
    }
    bag.question = corpus::ground(bag.question, out.kb, bag.facts);
    for (auto& a : bag.answers) a = corpus::ground(a, out.kb, bag.facts);
    out.provenance[bag.bag_id] = std::move(labels);
    bags.push_back(std::move(bag));
    bag_subject.push_back(si);
  }

  // Entity-level split: test subjects are held out whole, except possibly
  // the last one, which tops the test set up to its exact size.
  const auto target_test = static_cast<std::size_t>(
      std::llround((1.0 - cfg.train_fraction) * static_cast<double>(cfg.num_bags)));
  std::vector<std::vector<std::size_t>> bags_of(entities.size());
  for (std::size_t i = 0; i < bags.size(); ++i) bags_of[bag_subject[i]].push_back(i);
  std::vector<std::size_t> order(entities.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto split_rng = stream(cfg.seed, 0, 3);
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<bool> is_test(bags.size(), false);
  std::size_t n_test = 0;
  for (std::size_t e : order) {
    for (std::size_t b : bags_of[e]) {
      if (n_test == target_test) break;
      is_test[b] = true;
      ++n_test;
    }
    if (n_test == target_test) break;
  }
  for (std::size_t i = 0; i < bags.size(); ++i) {
    (is_test[i] ? out.test : out.train).push_back(std::move(bags[i]));
  }
  return out;
}

std::string config_to_json(const GenConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["num_entities"] = cfg.num_entities;
  j["predicates"] = cfg.predicates;
  j["values_per_predicate"] = cfg.values_per_predicate;
  j["num_bags"] = cfg.num_bags;
  j["answers_per_bag_mean"] = cfg.answers_per_bag_mean;
  j["p_irrelevant"] = cfg.p_irrelevant;
  j["p_inconsistent"] = cfg.p_inconsistent;
  j["irrelevant_skew"] = cfg.irrelevant_skew;
  j["single_noise_scale"] = cfg.single_noise_scale;
  j["p_multi_value"] = cfg.p_multi_value;
  j["vocab_noise_tokens"] = cfg.vocab_noise_tokens;
  j["train_fraction"] = cfg.train_fraction;
  return j.dump(2);
}

void write_corpus(const std::filesystem::path& dir, const GeneratedCorpus& corpus, const GenConfig& cfg) {
  std::filesystem::create_directories(dir);
  corpus::save_kb(dir / "kb.tsv", corpus.kb);
  corpus::save_bags(dir / "train.jsonl", corpus.train);
  corpus::save_bags(dir / "test.jsonl", corpus.test);
  std::ofstream prov(dir / "provenance.jsonl", std::ios::binary);
  for (const auto& [id, labels] : corpus.provenance) {
    nlohmann::ordered_json j;
    j["bag_id"] = id;
    auto arr = nlohmann::ordered_json::array();
    for (auto l : labels) arr.push_back(to_string(l));
    j["labels"] = std::move(arr);
    prov << j.dump() << '\n';
  }
  std::ofstream conf(dir / "gen_config.json", std::ios::binary);
  conf << config_to_json(cfg) << '\n';
}

std::map<std::int64_t, std::vector<AnswerLabel>> load_provenance(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open provenance file " + path.string());
  std::map<std::int64_t, std::vector<AnswerLabel>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    std::vector<AnswerLabel> labels;
    for (const auto& l : j.at("labels")) labels.push_back(label_from_string(l.get<std::string>()));
    out[j.at("bag_id").get<std::int64_t>()] = std::move(labels);
  }
  return out;
}

}  // namespace kbqa::synth
