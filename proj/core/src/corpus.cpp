#include "kbqa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::corpus {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string bag_context(std::int64_t bag_id) { return "bag_id " + std::to_string(bag_id); }

}  // namespace

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

Utterance tokenize(std::string_view text) {
  Utterance utt;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) utt.tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return utt;
}

std::vector<std::string> normalize_tokens(std::span<const std::string> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    for (auto& piece : tokenize(t).tokens) out.push_back(std::move(piece));
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// KnowledgeBase

int KnowledgeBase::add(std::string_view subject, std::string_view predicate,
                       std::string_view object) {
  std::string s = normalize_whitespace(subject);
  std::string p = normalize_whitespace(predicate);
  std::string o = normalize_whitespace(object);
  if (s.empty() || p.empty() || o.empty()) throw LoadError("empty triple field");
  auto key = std::make_tuple(s, p, o);
  if (seen_.count(key)) {
    throw LoadError("duplicate triple <" + s + ", " + p + ", " + o + ">");
  }
  const int id = static_cast<int>(triples_.size());
  seen_.emplace(std::move(key), id);
  by_subject_[s].push_back(id);
  by_subject_predicate_[{s, p}].push_back(id);
  triples_.push_back(KBTriple{std::move(s), std::move(p), std::move(o), id});
  return id;
}

const KBTriple& KnowledgeBase::at(int id) const {
  if (!contains(id)) throw InputError("unknown triple id " + std::to_string(id));
  return triples_[static_cast<std::size_t>(id)];
}

std::span<const int> KnowledgeBase::facts_of(const std::string& subject) const {
  auto it = by_subject_.find(subject);
  if (it == by_subject_.end()) return {};
  return it->second;
}

std::vector<std::string> KnowledgeBase::predicates() const {
  std::vector<std::string> out;
  for (const auto& t : triples_) out.push_back(t.predicate);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool KnowledgeBase::indexes_consistent() const {
  std::map<std::string, std::vector<int>> subj;
  std::map<SubjectPredicate, std::vector<int>> subj_pred;
  for (const auto& t : triples_) {
    subj[t.subject].push_back(t.id);
    subj_pred[{t.subject, t.predicate}].push_back(t.id);
  }
  return subj == by_subject_ && subj_pred == by_subject_predicate_;
}

KnowledgeBase read_kb(std::istream& in, const std::string& source_name) {
  KnowledgeBase kb;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos ||
        line.find('\t', tab2 + 1) != std::string::npos) {
      throw LoadError(source_name + ":" + std::to_string(line_no) +
                      ": expected exactly 3 tab-separated fields");
    }
    try {
      kb.add(std::string_view(line).substr(0, tab1),
             std::string_view(line).substr(tab1 + 1, tab2 - tab1 - 1),
             std::string_view(line).substr(tab2 + 1));
    } catch (const LoadError& e) {
      throw LoadError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return kb;
}

KnowledgeBase load_kb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open KB file " + path.string());
  return read_kb(in, path.string());
}

void write_kb(std::ostream& out, const KnowledgeBase& kb) {
  for (const auto& t : kb.triples()) {
    out << t.subject << '\t' << t.predicate << '\t' << t.object << '\n';
  }
}

void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write KB file " + path.string());
  write_kb(out, kb);
}

// ---------------------------------------------------------------------------
// Bags

namespace {

Utterance parse_utterance(const nlohmann::json& j, std::size_t max_length, std::int64_t bag_id,
                          const char* what) {
  if (!j.is_array()) throw LoadError(bag_context(bag_id) + ": " + what + " must be a token list");
  std::vector<std::string> raw;
  for (const auto& t : j) {
    if (!t.is_string()) throw LoadError(bag_context(bag_id) + ": " + what + " tokens must be strings");
    raw.push_back(t.get<std::string>());
  }
  Utterance utt;
  utt.tokens = normalize_tokens(raw);
  if (utt.tokens.empty()) throw LoadError(bag_context(bag_id) + ": empty " + what);
  if (utt.tokens.size() > max_length) {
    throw LoadError(bag_context(bag_id) + ": " + what + " longer than " +
                    std::to_string(max_length) + " tokens");
  }
  return utt;
}

}  // namespace

QABag parse_bag_record(std::string_view line, std::size_t max_length) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("malformed bag record: ") + e.what());
  }
  if (!j.is_object() || !j.contains("bag_id") || !j["bag_id"].is_number_integer()) {
    throw LoadError("bag record without integer bag_id");
  }
  QABag bag;
  bag.bag_id = j["bag_id"].get<std::int64_t>();
  for (const char* field : {"question", "answers", "facts"}) {
    if (!j.contains(field)) throw LoadError(bag_context(bag.bag_id) + ": missing field " + field);
  }
  bag.question = parse_utterance(j["question"], max_length, bag.bag_id, "question");
  const auto& answers = j["answers"];
  if (!answers.is_array()) throw LoadError(bag_context(bag.bag_id) + ": answers must be a list");
  if (answers.empty()) throw LoadError(bag_context(bag.bag_id) + ": empty answer list");
  for (const auto& a : answers) bag.answers.push_back(parse_utterance(a, max_length, bag.bag_id, "answer"));
  const auto& facts = j["facts"];
  if (!facts.is_array()) throw LoadError(bag_context(bag.bag_id) + ": facts must be a list");
  for (const auto& f : facts) {
    if (!f.is_number_integer()) throw LoadError(bag_context(bag.bag_id) + ": fact ids must be integers");
    bag.facts.push_back(f.get<int>());
  }
  return bag;
}

std::string format_bag_record(const QABag& bag) {
  nlohmann::ordered_json j;
  j["bag_id"] = bag.bag_id;
  j["question"] = bag.question.tokens;
  auto answers = nlohmann::ordered_json::array();
  for (const auto& a : bag.answers) answers.push_back(a.tokens);
  j["answers"] = std::move(answers);
  j["facts"] = bag.facts;
  return j.dump();
}

std::vector<QABag> read_bags(std::istream& in, const KnowledgeBase& kb, std::size_t max_length,
                             const std::string& source_name) {
  std::vector<QABag> bags;
  std::map<std::int64_t, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    QABag bag;
    try {
      bag = parse_bag_record(line, max_length);
    } catch (const LoadError& e) {
      throw LoadError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.emplace(bag.bag_id, line_no).second) {
      throw LoadError(source_name + ":" + std::to_string(line_no) + ": duplicate " +
                      bag_context(bag.bag_id));
    }
    for (int f : bag.facts) {
      if (!kb.contains(f)) {
        throw LoadError(source_name + ":" + std::to_string(line_no) + ": " + bag_context(bag.bag_id) +
                        ": unknown fact id " + std::to_string(f));
      }
    }
    bag.question = ground(bag.question, kb, bag.facts);
    for (auto& a : bag.answers) a = ground(a, kb, bag.facts);
    bags.push_back(std::move(bag));
  }
  return bags;
}

std::vector<QABag> load_bags(const std::filesystem::path& path, const KnowledgeBase& kb,
                             std::size_t max_length) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open bag file " + path.string());
  return read_bags(in, kb, max_length, path.string());
}

void write_bags(std::ostream& out, std::span<const QABag> bags) {
  for (const auto& b : bags) out << format_bag_record(b) << '\n';
}

void save_bags(const std::filesystem::path& path, std::span<const QABag> bags) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write bag file " + path.string());
  write_bags(out, bags);
}

std::vector<std::string> mentioned_objects(const Utterance& utt) {
  std::vector<std::string> out;
  for (const auto& m : utt.mentions) {
    if (m.role != MentionRole::kObject) continue;
    if (std::find(out.begin(), out.end(), m.entity) == out.end()) out.push_back(m.entity);
  }
  return out;
}

}  // namespace kbqa::corpus
