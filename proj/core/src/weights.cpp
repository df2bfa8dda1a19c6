#include "kbqa/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "kbqa/errors.hpp"

namespace kbqa::loss {

const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::kKb: return "kb";
    case Scheme::kContent: return "content";
    case Scheme::kUniform: return "uniform";
  }
  return "?";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "kb") return Scheme::kKb;
  if (s == "content") return Scheme::kContent;
  if (s == "uniform") return Scheme::kUniform;
  throw ConfigError("unknown weighting scheme '" + s + "'");
}

const char* to_string(ZeroFallback f) { return f == ZeroFallback::kUniform ? "uniform" : "drop-bag"; }

ZeroFallback fallback_from_string(const std::string& s) {
  if (s == "uniform") return ZeroFallback::kUniform;
  if (s == "drop-bag") return ZeroFallback::kDropBag;
  throw ConfigError("unknown zero-weight fallback '" + s + "'");
}

BagWeights make_weights(std::int64_t bag_id, Scheme scheme, std::vector<double> raw, ZeroFallback fallback) {
  BagWeights w;
  w.bag_id = bag_id;
  w.scheme = scheme;
  for (double c : raw) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw InputError("bag_id " + std::to_string(bag_id) + ": invalid weight");
  }
  w.weights = std::move(raw);
  for (double c : w.weights) w.z += c;
  if (w.z == 0.0) {
    w.fallback = true;
    if (fallback == ZeroFallback::kUniform) {
      std::fill(w.weights.begin(), w.weights.end(), 1.0);
      w.z = static_cast<double>(w.weights.size());
    } else {
      w.dropped = true;
    }
  }
  return w;
}

BagWeights uniform_weights(const corpus::QABag& bag) {
  return make_weights(bag.bag_id, Scheme::kUniform, std::vector<double>(bag.answers.size(), 1.0));
}

std::map<std::string, int> entity_counts(const corpus::QABag& bag) {
  std::map<std::string, int> count;
  for (const auto& a : bag.answers) {
    for (const auto& v : corpus::mentioned_objects(a)) ++count[v];
  }
  return count;
}

BagWeights kb_weights(const corpus::QABag& bag, ZeroFallback fallback) {
  const auto count = entity_counts(bag);
  std::vector<double> raw;
  for (const auto& a : bag.answers) {
    double c = 0.0;
    for (const auto& v : corpus::mentioned_objects(a)) c += count.at(v);
    raw.push_back(c);
  }
  return make_weights(bag.bag_id, Scheme::kKb, std::move(raw), fallback);
}

MeanEmbeddingEncoder::MeanEmbeddingEncoder(Vocabulary words, Eigen::MatrixXd embeddings)
    : words_(std::move(words)), embeddings_(std::move(embeddings)) {
  if (static_cast<std::size_t>(embeddings_.cols()) < words_.size()) {
    throw ContractError("embedding table has fewer columns than the vocabulary");
  }
}

Eigen::VectorXd MeanEmbeddingEncoder::encode(const corpus::Utterance& answer) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(embeddings_.rows());
  if (answer.tokens.empty()) return v;
  for (const auto& t : answer.tokens) v += embeddings_.col(words_.encode(t));
  return v / static_cast<double>(answer.tokens.size());
}

BagWeights weights_from_similarity(std::int64_t bag_id, const Eigen::MatrixXd& cosine, ZeroFallback fallback) {
  const auto n = cosine.rows();
  if (cosine.cols() != n) throw ContractError("similarity matrix must be square");
  if (n == 1) return make_weights(bag_id, Scheme::kContent, {1.0}, fallback);
  std::vector<double> raw(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = -1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) best = std::max(best, cosine(i, j));
    }
    raw[static_cast<std::size_t>(i)] = std::clamp(best, 0.0, 1.0);
  }
  return make_weights(bag_id, Scheme::kContent, std::move(raw), fallback);
}

BagWeights content_weights(const corpus::QABag& bag, const AnswerEncoder& encoder, ZeroFallback fallback) {
  const auto n = static_cast<Eigen::Index>(bag.answers.size());
  std::vector<Eigen::VectorXd> enc;
  try {
    for (const auto& a : bag.answers) enc.push_back(encoder.encode(a));
  } catch (const std::exception& e) {
    throw InputError("bag_id " + std::to_string(bag.bag_id) + ": answer encoder failed: " + e.what());
  }
  Eigen::MatrixXd cos = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& a = enc[static_cast<std::size_t>(i)];
      const auto& b = enc[static_cast<std::size_t>(j)];
      const double denom = a.norm() * b.norm();
      cos(i, j) = denom > 0.0 ? a.dot(b) / denom : 0.0;
    }
  }
  return weights_from_similarity(bag.bag_id, cos, fallback);
}

void save_weights(const std::filesystem::path& path, std::span<const BagWeights> weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write weights file " + path.string());
  for (const auto& w : weights) {
    nlohmann::ordered_json j;
    j["bag_id"] = w.bag_id;
    j["scheme"] = to_string(w.scheme);
    j["weights"] = w.weights;
    j["z"] = w.z;
    j["fallback"] = w.fallback;
    j["dropped"] = w.dropped;
    out << j.dump() << '\n';
  }
}

std::map<std::int64_t, BagWeights> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open weights file " + path.string());
  std::map<std::int64_t, BagWeights> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      BagWeights w;
      w.bag_id = j.at("bag_id").get<std::int64_t>();
      w.scheme = scheme_from_string(j.at("scheme").get<std::string>());
      w.weights = j.at("weights").get<std::vector<double>>();
      w.z = j.at("z").get<double>();
      w.fallback = j.value("fallback", false);
      w.dropped = j.value("dropped", false);
      if (!out.emplace(w.bag_id, std::move(w)).second) {
        throw LoadError("duplicate bag_id " + std::to_string(j.at("bag_id").get<std::int64_t>()));
      }
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace kbqa::loss
