#include "kbqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::model {

namespace {

constexpr char kMagic[8] = {'K', 'B', 'Q', 'A', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError("truncated checkpoint (" + what + ")");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto& d = ckpt.params.dims;
  nlohmann::ordered_json h;
  h["dims"] = {{"embed", d.embed},   {"kb", d.kb},
               {"hidden", d.hidden}, {"vocab", d.vocab},
               {"entity_rows", d.entity_rows}, {"predicate_rows", d.predicate_rows}};
  h["lexicon"] = {{"words", ckpt.lexicon.words().tokens()},
                  {"entities", ckpt.lexicon.entities()},
                  {"predicates", ckpt.lexicon.predicates()},
                  {"hash_buckets", ckpt.lexicon.hash_buckets()}};
  h["lexicon_hash"] = hex(ckpt.lexicon.hash());
  auto tensors = nlohmann::ordered_json::array();
  const auto refs = ckpt.params.tensors();
  for (const auto& t : refs) tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  h["tensors"] = std::move(tensors);
  auto meta = nlohmann::ordered_json::parse(ckpt.metadata_json);
  if (!meta.is_object()) throw ContractError("checkpoint metadata must be a JSON object");
  h["metadata"] = std::move(meta);
  const std::string header = h.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : refs) {
      out.write(reinterpret_cast<const char*>(t.data), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw LoadError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_lexicon_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw LoadError(path.string() + ": not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto hlen = get<std::uint64_t>(in, "header length");
  if (hlen > (1ULL << 32)) throw LoadError(path.string() + ": implausible header length");
  std::string header(hlen, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(hlen))) throw LoadError("truncated checkpoint (header)");

  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(header);
    ModelDims d;
    const auto& jd = h.at("dims");
    d.embed = jd.at("embed");
    d.kb = jd.at("kb");
    d.hidden = jd.at("hidden");
    d.vocab = jd.at("vocab");
    d.entity_rows = jd.at("entity_rows");
    d.predicate_rows = jd.at("predicate_rows");
    d.validate();
    const auto& jl = h.at("lexicon");
    const auto words = jl.at("words").get<std::vector<std::string>>();
    ck.lexicon = Lexicon(Vocabulary(words), jl.at("entities").get<std::vector<std::string>>(),
                         jl.at("predicates").get<std::vector<std::string>>(), jl.at("hash_buckets").get<int>());
    if (hex(ck.lexicon.hash()) != h.at("lexicon_hash").get<std::string>()) {
      throw LoadError(path.string() + ": lexicon hash mismatch (file corrupted)");
    }
    if (expected_lexicon_hash && *expected_lexicon_hash != ck.lexicon.hash()) {
      throw LoadError(path.string() + ": checkpoint vocabulary does not match the expected vocabulary");
    }
    ck.params = ModelParams(d);
    auto refs = ck.params.tensors();
    const auto& jt = h.at("tensors");
    if (jt.size() != refs.size()) throw LoadError(path.string() + ": tensor count mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (jt[i].at("name").get<std::string>() != refs[i].name || jt[i].at("rows").get<Eigen::Index>() != refs[i].rows ||
          jt[i].at("cols").get<Eigen::Index>() != refs[i].cols) {
        throw LoadError(path.string() + ": tensor layout mismatch at " + refs[i].name);
      }
      if (!in.read(reinterpret_cast<char*>(refs[i].data), static_cast<std::streamsize>(refs[i].size() * sizeof(double)))) {
        throw LoadError("truncated checkpoint (tensor " + refs[i].name + ")");
      }
    }
    ck.metadata_json = h.value("metadata", nlohmann::json::object()).dump();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError(path.string() + ": trailing bytes after tensors");
  return ck;
}

}  // namespace kbqa::model
