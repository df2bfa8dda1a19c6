#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kbqa/corpus.hpp"
#include "kbqa/vocabulary.hpp"

namespace kbqa::model {

/// Symbol tables shared by the model and its inputs: output/input words,
/// KB entity and value strings, and predicate names.
class Lexicon {
 public:
  static constexpr int kDefaultHashBuckets = 16;

  Lexicon() = default;
  Lexicon(Vocabulary words, std::vector<std::string> entities, std::vector<std::string> predicates,
          int hash_buckets = kDefaultHashBuckets);

  /// Words come from training questions and decoding targets (count >=
  /// min_word_count); entities and predicates from the whole KB.
  static Lexicon build(const corpus::KnowledgeBase& kb, std::span<const corpus::QABag> train,
                       std::size_t min_word_count = 1, int hash_buckets = kDefaultHashBuckets);

  const Vocabulary& words() const { return words_; }
  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& predicates() const { return predicates_; }
  int hash_buckets() const { return hash_buckets_; }

  /// Out-of-table strings map to one of `hash_buckets` trailing rows.
  int entity_row(const std::string& s) const;
  /// Unknown predicates share the trailing row.
  int predicate_row(const std::string& p) const;
  int entity_rows() const { return static_cast<int>(entities_.size()) + hash_buckets_; }
  int predicate_rows() const { return static_cast<int>(predicates_.size()) + 1; }

  std::uint64_t hash() const;

 private:
  Vocabulary words_;
  std::vector<std::string> entities_;
  std::vector<std::string> predicates_;
  std::unordered_map<std::string, int> entity_ids_;
  std::unordered_map<std::string, int> predicate_ids_;
  int hash_buckets_ = kDefaultHashBuckets;
};

struct FactRow {
  int subject = 0;
  int predicate = 0;
  int object = 0;
};

/// Per-bag model input. Extended ids: [0, V) is the base vocabulary; ids
/// from V on are question tokens and KB object values that are not in the
/// base vocabulary, merged by surface form.
struct BagInput {
  std::vector<int> question_ids;  // embedding ids (UNK for OOV)
  std::vector<int> question_ext;  // copy target per question position
  std::vector<FactRow> facts;
  std::vector<int> object_ext;  // retrieve target per fact
  std::vector<std::string> extra_tokens;  // surfaces of ids V, V+1, ...
  int vocab_size = 0;

  int ext_size() const { return vocab_size + static_cast<int>(extra_tokens.size()); }
  std::size_t question_length() const { return question_ids.size(); }
  std::size_t fact_count() const { return facts.size(); }
};

/// Teacher-forcing view of one answer; both vectors have length L_y + 1.
struct AnswerTarget {
  std::vector<int> input_ids;   // BOS, y_1 .. y_L (embedding ids)
  std::vector<int> target_ext;  // y_1 .. y_L, EOS (extended ids)

  std::size_t answer_length() const { return target_ext.size() - 1; }
  std::size_t steps() const { return target_ext.size(); }
};

/// Answer tokens with each grounded object-value span collapsed into one
/// atomic token, the unit the retrieve mode emits.
std::vector<std::string> decoding_target(const corpus::Utterance& answer);

BagInput prepare_bag(const corpus::QABag& bag, const corpus::KnowledgeBase& kb, const Lexicon& lex);

/// Extended id for a surface; UNK when it is reachable by no mode.
int ext_id(const BagInput& in, const Lexicon& lex, std::string_view surface);
const std::string& ext_surface(const BagInput& in, const Lexicon& lex, int ext);

AnswerTarget prepare_answer(const corpus::Utterance& answer, const BagInput& in, const Lexicon& lex);

}  // namespace kbqa::model
