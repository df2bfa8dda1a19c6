#include "kbqa/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "json.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::eval {

namespace {

using Bigram = std::pair<std::string, std::string>;

std::map<std::string, std::size_t> unigrams(std::span<const std::string> t) {
  std::map<std::string, std::size_t> c;
  for (const auto& w : t) ++c[w];
  return c;
}

std::map<Bigram, std::size_t> bigrams(std::span<const std::string> t) {
  std::map<Bigram, std::size_t> c;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) ++c[{t[i], t[i + 1]}];
  return c;
}

template <typename K>
std::size_t clipped(const std::map<K, std::size_t>& pred, const std::vector<std::map<K, std::size_t>>& refs) {
  std::size_t m = 0;
  for (const auto& [g, n] : pred) {
    std::size_t best = 0;
    for (const auto& r : refs) {
      auto it = r.find(g);
      if (it != r.end()) best = std::max(best, it->second);
    }
    m += std::min(n, best);
  }
  return m;
}

Tokens resplit(const Tokens& t) { return corpus::tokenize(corpus::join_tokens(t)).tokens; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_f1(std::span<const std::string> pred, std::span<const std::string> ref) {
  if (pred.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(pred, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(pred.size());
  const double r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

double rouge_l(std::span<const std::string> pred, std::span<const Tokens> refs) {
  double best = 0.0;
  for (const auto& r : refs) best = std::max(best, rouge_l_f1(pred, r));
  return best;
}

double rougeL(std::span<const Tokens> preds, std::span<const std::vector<Tokens>> refs) {
  if (preds.size() != refs.size()) throw ContractError("one reference set per prediction is required");
  if (preds.empty()) throw InputError("ROUGE-L needs at least one question");
  double sum = 0.0;
  for (std::size_t q = 0; q < preds.size(); ++q) sum += rouge_l(preds[q], refs[q]);
  return sum / static_cast<double>(preds.size());
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  match1 += o.match1;
  total1 += o.total1;
  match2 += o.match2;
  total2 += o.total2;
  pred_length += o.pred_length;
  ref_length += o.ref_length;
  return *this;
}

BleuStats bleu_stats(std::span<const std::string> pred, std::span<const Tokens> refs) {
  if (refs.empty()) throw InputError("BLEU needs at least one reference");
  BleuStats s;
  std::vector<std::map<std::string, std::size_t>> r1;
  std::vector<std::map<Bigram, std::size_t>> r2;
  for (const auto& r : refs) {
    r1.push_back(unigrams(r));
    r2.push_back(bigrams(r));
  }
  s.match1 = clipped(unigrams(pred), r1);
  s.match2 = clipped(bigrams(pred), r2);
  s.total1 = pred.size();
  s.total2 = pred.size() > 0 ? pred.size() - 1 : 0;
  s.pred_length = pred.size();
  std::size_t best = refs[0].size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > pred.size() ? len - pred.size() : pred.size() - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  s.ref_length = best;
  return s;
}

double bleu2_from_stats(const BleuStats& s) {
  if (s.pred_length == 0 || s.match1 == 0 || s.match2 == 0) return 0.0;
  const double p1 = static_cast<double>(s.match1) / static_cast<double>(s.total1);
  const double p2 = static_cast<double>(s.match2) / static_cast<double>(s.total2);
  const double c = static_cast<double>(s.pred_length);
  const double r = static_cast<double>(s.ref_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(0.5 * std::log(p1) + 0.5 * std::log(p2));
}

double bleu2(std::span<const Tokens> preds, std::span<const std::vector<Tokens>> refs) {
  if (preds.size() != refs.size()) throw ContractError("one reference set per prediction is required");
  if (preds.empty()) throw InputError("BLEU needs at least one question");
  BleuStats total;
  for (std::size_t q = 0; q < preds.size(); ++q) total += bleu_stats(preds[q], refs[q]);
  return bleu2_from_stats(total);
}

std::vector<std::string> gold_objects(const corpus::QABag& bag) {
  std::set<std::string> g;
  for (const auto& a : bag.answers) {
    for (auto& v : corpus::mentioned_objects(a)) g.insert(std::move(v));
  }
  return {g.begin(), g.end()};
}

bool entity_hit(std::span<const std::string> pred, std::span<const std::string> gold) {
  const Tokens p = resplit(Tokens(pred.begin(), pred.end()));
  for (const auto& value : gold) {
    const auto v = corpus::tokenize(value).tokens;
    if (v.empty() || v.size() > p.size()) continue;
    if (std::search(p.begin(), p.end(), v.begin(), v.end()) != p.end()) return true;
  }
  return false;
}

EvalReport evaluate(std::span<const Tokens> predictions, std::span<const corpus::QABag> gold) {
  if (predictions.size() != gold.size()) throw ContractError("one prediction per bag is required");
  if (gold.empty()) throw InputError("evaluation needs at least one question");
  EvalReport rep;
  for (std::size_t q = 0; q < gold.size(); ++q) {
    QuestionResult r;
    r.bag_id = gold[q].bag_id;
    r.prediction = resplit(predictions[q]);
    std::vector<Tokens> refs;
    for (const auto& a : gold[q].answers) refs.push_back(a.tokens);
    r.rouge = rouge_l(r.prediction, refs);
    r.bleu = bleu_stats(r.prediction, refs);
    const auto g = gold_objects(gold[q]);
    if (!g.empty()) r.hit = entity_hit(r.prediction, g);
    rep.per_question.push_back(std::move(r));
  }
  aggregate(rep);
  return rep;
}

void aggregate(EvalReport& rep) {
  rep.questions = rep.per_question.size();
  rep.accuracy_questions = 0;
  std::size_t hits = 0;
  double rouge = 0.0;
  BleuStats bleu;
  for (const auto& r : rep.per_question) {
    if (r.hit) {
      ++rep.accuracy_questions;
      hits += *r.hit ? 1 : 0;
    }
    rouge += r.rouge;
    bleu += r.bleu;
  }
  rep.excluded = rep.questions - rep.accuracy_questions;
  rep.accuracy = rep.accuracy_questions ? static_cast<double>(hits) / static_cast<double>(rep.accuracy_questions) : 0.0;
  rep.rougeL = rep.questions ? rouge / static_cast<double>(rep.questions) : 0.0;
  rep.bleu2 = bleu2_from_stats(bleu);
}

void bootstrap(EvalReport& rep, int resamples, std::uint64_t seed) {
  if (rep.per_question.empty() || resamples < 1) return;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, rep.per_question.size() - 1);
  std::vector<double> acc, bl, rg;
  EvalReport sample;
  for (int b = 0; b < resamples; ++b) {
    sample.per_question.clear();
    for (std::size_t i = 0; i < rep.per_question.size(); ++i) sample.per_question.push_back(rep.per_question[pick(rng)]);
    aggregate(sample);
    acc.push_back(sample.accuracy);
    bl.push_back(sample.bleu2);
    rg.push_back(sample.rougeL);
  }
  auto interval = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const auto at = [&](double q) {
      const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1) + 0.5));
      return v[idx];
    };
    return Interval{at(0.025), at(0.975)};
  };
  rep.accuracy_ci = interval(acc);
  rep.bleu2_ci = interval(bl);
  rep.rougeL_ci = interval(rg);
}

std::string report_json(const EvalReport& rep, bool with_questions) {
  nlohmann::ordered_json j;
  j["accuracy"] = rep.accuracy;
  j["bleu2"] = rep.bleu2;
  j["rougeL"] = rep.rougeL;
  j["questions"] = rep.questions;
  j["accuracy_questions"] = rep.accuracy_questions;
  j["excluded"] = rep.excluded;
  auto ci = [](const std::optional<Interval>& i) {
    return i ? nlohmann::ordered_json::array({i->lo, i->hi}) : nlohmann::ordered_json();
  };
  if (rep.accuracy_ci) {
    j["accuracy_ci"] = ci(rep.accuracy_ci);
    j["bleu2_ci"] = ci(rep.bleu2_ci);
    j["rougeL_ci"] = ci(rep.rougeL_ci);
  }
  if (with_questions) {
    auto qs = nlohmann::ordered_json::array();
    for (const auto& r : rep.per_question) {
      nlohmann::ordered_json q;
      q["bag_id"] = r.bag_id;
      q["prediction"] = r.prediction;
      q["hit"] = r.hit ? nlohmann::ordered_json(*r.hit) : nlohmann::ordered_json();
      q["rougeL"] = r.rouge;
      q["bleu"] = {r.bleu.match1, r.bleu.total1, r.bleu.match2, r.bleu.total2, r.bleu.pred_length, r.bleu.ref_length};
      qs.push_back(std::move(q));
    }
    j["per_question"] = std::move(qs);
  }
  return j.dump();
}

std::string report_table(const EvalReport& rep) {
  std::string out;
  out += "metric     value   95% CI\n";
  auto row = [&](const char* name, double v, const std::optional<Interval>& ci) {
    char buf[96];
    if (ci) {
      std::snprintf(buf, sizeof buf, "%-9s %6s   [%s, %s]\n", name, fmt(v).c_str(), fmt(ci->lo).c_str(), fmt(ci->hi).c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%-9s %6s\n", name, fmt(v).c_str());
    }
    out += buf;
  };
  row("Accuracy", rep.accuracy, rep.accuracy_ci);
  row("BLEU-2", rep.bleu2, rep.bleu2_ci);
  row("ROUGE-L", rep.rougeL, rep.rougeL_ci);
  out += "questions " + std::to_string(rep.questions) + ", scored for accuracy " + std::to_string(rep.accuracy_questions) +
         ", excluded (no gold object) " + std::to_string(rep.excluded) + "\n";
  return out;
}

}  // namespace kbqa::eval
