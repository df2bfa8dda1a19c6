#include "kbqa/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kbqa/errors.hpp"
#include "kbqa/vocabulary.hpp"

namespace kbqa {

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
  return buf;
}

void ExperimentManifest::add_input(const std::filesystem::path& path) { inputs[path.string()] = file_checksum(path); }

std::string manifest_json(const ExperimentManifest& m) {
  nlohmann::ordered_json j;
  j["tool"] = "kbqa";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["seed"] = m.seed;
  j["config"] = nlohmann::ordered_json::parse(m.config_json);
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["single_thread"] = true;
  return j.dump(2);
}

void write_manifest(const std::filesystem::path& path, const ExperimentManifest& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write manifest " + path.string());
  out << manifest_json(m) << '\n';
}

}  // namespace kbqa
