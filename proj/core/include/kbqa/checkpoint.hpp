#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "kbqa/extended_vocab.hpp"
#include "kbqa/params.hpp"

namespace kbqa::model {

/// Layout, all integers little-endian:
///   8 bytes   "KBQACKPT"
///   u32       format version (1)
///   u64       header length h
///   h bytes   JSON header: dims, lexicon (words, entities, predicates,
///             hash_buckets), lexicon_hash (hex), tensors [{name, rows,
///             cols}], metadata (free-form object)
///   doubles   every tensor in header order, column-major
struct Checkpoint {
  ModelParams params;
  Lexicon lexicon;
  std::string metadata_json = "{}";  // must be a JSON object
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Verifies the magic, version, tensor layout and the lexicon hash. When
/// `expected_lexicon_hash` is given the stored lexicon must match it.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_lexicon_hash = std::nullopt);

}  // namespace kbqa::model
