#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace kbqa::corpus {

inline constexpr std::size_t kDefaultMaxLength = 128;

struct KBTriple {
  std::string subject;
  std::string predicate;
  std::string object;
  int id = 0;

  friend bool operator==(const KBTriple&, const KBTriple&) = default;
};

/// Subject-predicate-object facts plus lookup indexes. Triple ids equal
/// their position in `triples()`.
class KnowledgeBase {
 public:
  using SubjectPredicate = std::pair<std::string, std::string>;

  KnowledgeBase() = default;

  /// Appends a triple after whitespace normalization. Throws LoadError on
  /// empty fields or an exact duplicate.
  int add(std::string_view subject, std::string_view predicate, std::string_view object);

  const std::vector<KBTriple>& triples() const { return triples_; }
  std::size_t size() const { return triples_.size(); }
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < triples_.size(); }
  const KBTriple& at(int id) const;

  const std::map<std::string, std::vector<int>>& by_subject() const { return by_subject_; }
  const std::map<SubjectPredicate, std::vector<int>>& by_subject_predicate() const {
    return by_subject_predicate_;
  }
  std::span<const int> facts_of(const std::string& subject) const;

  /// Sorted list of distinct predicate names.
  std::vector<std::string> predicates() const;

  /// True when both indexes equal the ones rebuilt from the triples.
  bool indexes_consistent() const;

 private:
  std::vector<KBTriple> triples_;
  std::map<std::string, std::vector<int>> by_subject_;
  std::map<SubjectPredicate, std::vector<int>> by_subject_predicate_;
  std::map<std::tuple<std::string, std::string, std::string>, int> seen_;
};

KnowledgeBase read_kb(std::istream& in, const std::string& source_name = "<stream>");
KnowledgeBase load_kb(const std::filesystem::path& path);
void write_kb(std::ostream& out, const KnowledgeBase& kb);
void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb);

enum class MentionRole { kSubject, kObject };

/// A grounded span [begin, end) of an utterance.
struct EntityMention {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string entity;
  std::optional<int> triple_id;
  MentionRole role = MentionRole::kObject;

  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct Utterance {
  std::vector<std::string> tokens;
  std::vector<EntityMention> mentions;

  std::size_t length() const { return tokens.size(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Splits on whitespace; tokens are never empty.
Utterance tokenize(std::string_view text);
/// Trims every token and splits tokens that contain inner whitespace.
std::vector<std::string> normalize_tokens(std::span<const std::string> tokens);
std::string join_tokens(std::span<const std::string> tokens);
/// Trim plus collapse of internal whitespace runs to one space.
std::string normalize_whitespace(std::string_view text);

/// Annotates every longest, left-to-right, non-overlapping span whose
/// surface equals a subject or object of an in-scope triple. Existing
/// mentions are discarded, so grounding is idempotent.
Utterance ground(const Utterance& utt, const KnowledgeBase& kb,
                 std::span<const int> fact_scope);
/// Scope is every triple of `subject_scope`, or the whole KB when empty.
Utterance ground(const Utterance& utt, const KnowledgeBase& kb,
                 const std::optional<std::string>& subject_scope = std::nullopt);

struct QABag {
  std::int64_t bag_id = 0;
  Utterance question;
  std::vector<Utterance> answers;
  std::vector<int> facts;

  bool single_instance() const { return answers.size() == 1; }
};

/// Parses one canonical bag record (no grounding, no KB checks).
QABag parse_bag_record(std::string_view line, std::size_t max_length = kDefaultMaxLength);
std::string format_bag_record(const QABag& bag);

/// Reads bags, checks invariants against `kb`, and grounds questions and
/// answers against each bag's fact set.
std::vector<QABag> read_bags(std::istream& in, const KnowledgeBase& kb,
                             std::size_t max_length = kDefaultMaxLength,
                             const std::string& source_name = "<stream>");
std::vector<QABag> load_bags(const std::filesystem::path& path, const KnowledgeBase& kb,
                             std::size_t max_length = kDefaultMaxLength);
void write_bags(std::ostream& out, std::span<const QABag> bags);
void save_bags(const std::filesystem::path& path, std::span<const QABag> bags);

/// Object values mentioned anywhere in `utt` (distinct, in first-seen order).
std::vector<std::string> mentioned_objects(const Utterance& utt);

}  // namespace kbqa::corpus
