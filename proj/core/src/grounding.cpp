#include <algorithm>
#include <unordered_map>

#include "kbqa/corpus.hpp"

namespace kbqa::corpus {

namespace {

struct SurfaceMatch {
  int triple_id;
  MentionRole role;
};

std::size_t token_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), ' ')) + 1;
}

}  // namespace

Utterance ground(const Utterance& utt, const KnowledgeBase& kb, std::span<const int> fact_scope) {
  // surface -> preferred match: object role beats subject role, then lowest id.
  std::unordered_map<std::string, SurfaceMatch> table;
  std::size_t max_span = 0;
  auto offer = [&](const std::string& surface, int id, MentionRole role) {
    auto [it, inserted] = table.try_emplace(surface, SurfaceMatch{id, role});
    if (!inserted) {
      auto& cur = it->second;
      const bool better = (role == MentionRole::kObject && cur.role == MentionRole::kSubject) ||
                          (role == cur.role && id < cur.triple_id);
      if (better) cur = SurfaceMatch{id, role};
    }
    max_span = std::max(max_span, token_count(surface));
  };
  for (int id : fact_scope) {
    if (!kb.contains(id)) continue;
    const auto& t = kb.at(id);
    offer(t.subject, id, MentionRole::kSubject);
    offer(t.object, id, MentionRole::kObject);
  }

  Utterance out;
  out.tokens = utt.tokens;
  const std::size_t n = utt.tokens.size();
  std::size_t i = 0;
  while (i < n) {
    bool matched = false;
    for (std::size_t len = std::min(max_span, n - i); len >= 1; --len) {
      const std::string surface =
          join_tokens(std::span<const std::string>(utt.tokens).subspan(i, len));
      auto it = table.find(surface);
      if (it == table.end()) continue;
      out.mentions.push_back(EntityMention{i, i + len, surface, it->second.triple_id, it->second.role});
      i += len;
      matched = true;
      break;
    }
    if (!matched) ++i;
  }
  return out;
}

Utterance ground(const Utterance& utt, const KnowledgeBase& kb,
                 const std::optional<std::string>& subject_scope) {
  std::vector<int> scope;
  if (subject_scope) {
    auto facts = kb.facts_of(*subject_scope);
    scope.assign(facts.begin(), facts.end());
  } else {
    scope.resize(kb.size());
    for (std::size_t i = 0; i < kb.size(); ++i) scope[i] = static_cast<int>(i);
  }
  return ground(utt, kb, scope);
}

}  // namespace kbqa::corpus
