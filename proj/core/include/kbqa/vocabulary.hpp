#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbqa {

/// Token <-> id bijection. Ids 0..3 are PAD, BOS, EOS, UNK in that order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Vocabulary();
  explicit Vocabulary(std::span<const std::string> tokens);

  /// Orders by descending count, then lexicographically; keeps tokens with
  /// count >= min_count.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::size_t>& counts,
                                std::size_t min_count = 1);

  int add(const std::string& token);
  int encode(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& decode(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace kbqa
