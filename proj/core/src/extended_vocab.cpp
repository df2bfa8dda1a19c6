#include "kbqa/extended_vocab.hpp"

#include <algorithm>
#include <set>

#include "kbqa/errors.hpp"

namespace kbqa::model {

Lexicon::Lexicon(Vocabulary words, std::vector<std::string> entities,
                 std::vector<std::string> predicates, int hash_buckets)
    : words_(std::move(words)),
      entities_(std::move(entities)),
      predicates_(std::move(predicates)),
      hash_buckets_(hash_buckets) {
  if (hash_buckets_ < 1) throw ConfigError("need at least one hash bucket");
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    if (!entity_ids_.emplace(entities_[i], static_cast<int>(i)).second) {
      throw LoadError("duplicate entity symbol '" + entities_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < predicates_.size(); ++i) {
    if (!predicate_ids_.emplace(predicates_[i], static_cast<int>(i)).second) {
      throw LoadError("duplicate predicate symbol '" + predicates_[i] + "'");
    }
  }
}

Lexicon Lexicon::build(const corpus::KnowledgeBase& kb, std::span<const corpus::QABag> train,
                       std::size_t min_word_count, int hash_buckets) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& bag : train) {
    for (const auto& t : bag.question.tokens) ++counts[t];
    for (const auto& a : bag.answers) {
      for (const auto& t : decoding_target(a)) ++counts[t];
    }
  }
  std::set<std::string> ents;
  for (const auto& t : kb.triples()) {
    ents.insert(t.subject);
    ents.insert(t.object);
  }
  return Lexicon(Vocabulary::from_counts(counts, min_word_count),
                 std::vector<std::string>(ents.begin(), ents.end()), kb.predicates(), hash_buckets);
}

int Lexicon::entity_row(const std::string& s) const {
  auto it = entity_ids_.find(s);
  if (it != entity_ids_.end()) return it->second;
  return static_cast<int>(entities_.size()) + static_cast<int>(fnv1a64(s) % static_cast<std::uint64_t>(hash_buckets_));
}

int Lexicon::predicate_row(const std::string& p) const {
  auto it = predicate_ids_.find(p);
  return it != predicate_ids_.end() ? it->second : static_cast<int>(predicates_.size());
}

std::uint64_t Lexicon::hash() const {
  std::uint64_t h = words_.hash();
  for (const auto& e : entities_) h = fnv1a64(e + "\n", h);
  h = fnv1a64("\x1f", h);
  for (const auto& p : predicates_) h = fnv1a64(p + "\n", h);
  h = fnv1a64(std::to_string(hash_buckets_), h);
  return h;
}

std::vector<std::string> decoding_target(const corpus::Utterance& answer) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto m = answer.mentions.begin();
  while (i < answer.tokens.size()) {
    while (m != answer.mentions.end() && (m->role != corpus::MentionRole::kObject || m->begin < i)) ++m;
    if (m != answer.mentions.end() && m->begin == i) {
      out.push_back(m->entity);
      i = m->end;
      ++m;
    } else {
      out.push_back(answer.tokens[i]);
      ++i;
    }
  }
  return out;
}

namespace {

int intern(BagInput& in, const Lexicon& lex, const std::string& surface) {
  if (lex.words().contains(surface)) return lex.words().encode(surface);
  auto it = std::find(in.extra_tokens.begin(), in.extra_tokens.end(), surface);
  if (it != in.extra_tokens.end()) return in.vocab_size + static_cast<int>(it - in.extra_tokens.begin());
  in.extra_tokens.push_back(surface);
  return in.vocab_size + static_cast<int>(in.extra_tokens.size()) - 1;
}

}  // namespace

BagInput prepare_bag(const corpus::QABag& bag, const corpus::KnowledgeBase& kb, const Lexicon& lex) {
  if (bag.question.tokens.empty()) throw InputError("empty question in bag " + std::to_string(bag.bag_id));
  BagInput in;
  in.vocab_size = static_cast<int>(lex.words().size());
  for (const auto& t : bag.question.tokens) {
    in.question_ids.push_back(lex.words().encode(t));
    in.question_ext.push_back(intern(in, lex, t));
  }
  for (int id : bag.facts) {
    const auto& t = kb.at(id);
    in.facts.push_back(FactRow{lex.entity_row(t.subject), lex.predicate_row(t.predicate),
                               lex.entity_row(t.object)});
    in.object_ext.push_back(intern(in, lex, t.object));
  }
  return in;
}

int ext_id(const BagInput& in, const Lexicon& lex, std::string_view surface) {
  if (lex.words().contains(surface)) return lex.words().encode(surface);
  auto it = std::find(in.extra_tokens.begin(), in.extra_tokens.end(), surface);
  if (it == in.extra_tokens.end()) return Vocabulary::kUnk;
  return in.vocab_size + static_cast<int>(it - in.extra_tokens.begin());
}

const std::string& ext_surface(const BagInput& in, const Lexicon& lex, int ext) {
  if (ext < in.vocab_size) return lex.words().decode(ext);
  const auto k = static_cast<std::size_t>(ext - in.vocab_size);
  if (k >= in.extra_tokens.size()) throw InputError("extended id out of range: " + std::to_string(ext));
  return in.extra_tokens[k];
}

AnswerTarget prepare_answer(const corpus::Utterance& answer, const BagInput& in, const Lexicon& lex) {
  const auto tokens = decoding_target(answer);
  if (tokens.empty()) throw InputError("empty answer");
  AnswerTarget t;
  t.input_ids.push_back(Vocabulary::kBos);
  for (const auto& tok : tokens) {
    t.input_ids.push_back(lex.words().encode(tok));
    t.target_ext.push_back(ext_id(in, lex, tok));
  }
  t.target_ext.push_back(Vocabulary::kEos);
  return t;
}

}  // namespace kbqa::model
