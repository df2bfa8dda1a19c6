#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kbqa {

inline constexpr const char* kVersion = "0.1.0";

/// Everything needed to re-run a command: argv, resolved config, input
/// checksums, seed and the files it produced. Contains no timestamps.
struct ExperimentManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_json = "{}";  // JSON object
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> checksum
  std::vector<std::string> outputs;           // paths relative to the out dir

  void add_input(const std::filesystem::path& path);
};

/// FNV-1a 64 of the file bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

std::string manifest_json(const ExperimentManifest& m);
void write_manifest(const std::filesystem::path& path, const ExperimentManifest& m);

}  // namespace kbqa
