#include "topicrag/embeddings.hpp"

#include <cmath>
#include <fstream>

#include "topicrag/error.hpp"
#include "topicrag/text.hpp"

namespace topicrag {

namespace {

constexpr std::uint64_t kOfflineSeed = 0x9e3779b97f4a7c15ULL;

}  // namespace

EmbedderSpec EmbedderSpec::from_json(const Json& j) {
  EmbedderSpec s;
  const std::string kind = j.value("kind", "offline");
  if (kind == "offline") {
    s.kind = Kind::Offline;
  } else if (kind == "external") {
    s.kind = Kind::External;
  } else {
    throw ConfigError("embedder kind must be \"offline\" or \"external\", got \"" + kind + "\"");
  }
  s.dim = j.value("dim", s.kind == Kind::Offline ? std::size_t{256} : std::size_t{0});
  s.min_order = j.value("min_order", s.min_order);
  s.max_order = j.value("max_order", s.max_order);
  s.endpoint = j.value("endpoint", "");
  s.model = j.value("model", "");
  s.cache_dir = j.value("cache_dir", "");
  s.retry.max_attempts = j.value("retries", s.retry.max_attempts);
  s.retry.initial_backoff = std::chrono::milliseconds(j.value("backoff_ms", 100));
  if (s.kind == Kind::Offline && s.dim == 0) throw ConfigError("embedder dim must be > 0");
  if (s.kind == Kind::Offline && (s.min_order == 0 || s.min_order > s.max_order)) {
    throw ConfigError("embedder n-gram orders must satisfy 1 <= min_order <= max_order");
  }
  if (s.kind == Kind::External && s.endpoint.empty()) throw ConfigError("external embedder needs an endpoint");
  return s;
}

Json EmbedderSpec::to_json() const {
  if (kind == Kind::Offline) {
    return {{"kind", "offline"}, {"dim", dim}, {"min_order", min_order}, {"max_order", max_order}};
  }
  return {{"kind", "external"},
          {"dim", dim},
          {"endpoint", endpoint},
          {"model", model},
          {"cache_dir", cache_dir.string()},
          {"retries", retry.max_attempts},
          {"backoff_ms", retry.initial_backoff.count()}};
}

void normalize(std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (!(ss > 0.0) || !std::isfinite(ss)) throw NumericError("cannot normalize a zero or non-finite vector");
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: embedding dims " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot;
}

OfflineEmbedder::OfflineEmbedder(std::size_t dim, std::size_t min_order, std::size_t max_order)
    : dim_(dim), min_order_(min_order), max_order_(max_order) {
  if (dim_ == 0) throw ConfigError("embedder dim must be > 0");
  if (min_order_ == 0 || min_order_ > max_order_) throw ConfigError("invalid n-gram orders");
}

std::string OfflineEmbedder::id() const {
  return "offline-hash:d" + std::to_string(dim_) + ":n" + std::to_string(min_order_) + "-" +
         std::to_string(max_order_);
}

Embedding OfflineEmbedder::embed(std::string_view raw) {
  const std::string normalized = text::normalize_whitespace(raw);
  if (normalized.empty()) throw ValidationError("cannot embed empty text");
  auto cps = text::decode_utf8(normalized);
  if (!cps) throw ValidationError("cannot embed invalid UTF-8 text");

  std::vector<double> v(dim_, 0.0);
  std::string gram;
  for (std::size_t order = min_order_; order <= max_order_; ++order) {
    if (cps->size() < order) break;
    const std::uint64_t seed = kOfflineSeed ^ (order * 0x100000001b3ULL);
    for (std::size_t i = 0; i + order <= cps->size(); ++i) {
      gram = text::encode_utf8(std::u32string_view(*cps).substr(i, order));
      const std::uint64_t h = fnv1a64(gram, seed);
      const std::size_t bucket = static_cast<std::size_t>((h ^ (h >> 29)) % dim_);
      v[bucket] += (h >> 63) ? -1.0 : 1.0;
    }
  }
  normalize(v);
  return {std::move(v), id()};
}

ExternalEmbedder::ExternalEmbedder(EmbedderSpec spec) : spec_(std::move(spec)) {
  if (spec_.endpoint.empty()) throw ConfigError("external embedder needs an endpoint");
}

std::string ExternalEmbedder::cache_key(std::string_view text) const {
  std::string material = spec_.model;
  material.push_back('\0');
  material.append(text);
  return hex64(fnv1a64(material));
}

Embedding ExternalEmbedder::embed(std::string_view text) {
  if (text.empty()) throw ValidationError("cannot embed empty text");
  const std::string key = cache_key(text);
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) return {it->second, id()};
  }
  const std::filesystem::path cache_file =
      spec_.cache_dir.empty() ? std::filesystem::path{} : spec_.cache_dir / (key + ".json");
  if (!cache_file.empty() && std::filesystem::exists(cache_file)) {
    auto cached = Json::parse(read_file(cache_file))["vector"].get<std::vector<double>>();
    std::lock_guard lock(mu_);
    memo_.emplace(key, cached);
    return {std::move(cached), id()};
  }

  ++calls_;
  const Json reply = post_json(spec_.endpoint, {{"model", spec_.model}, {"input", {std::string(text)}}}, spec_.retry);
  if (!reply.is_object() || !reply.contains("vectors") || !reply["vectors"].is_array() ||
      reply["vectors"].size() != 1 || !reply["vectors"][0].is_array()) {
    throw ProtocolError("embedding reply must be {\"vectors\": [[...]]} with one vector, got " + reply.dump());
  }
  std::vector<double> v;
  try {
    v = reply["vectors"][0].get<std::vector<double>>();
  } catch (const Json::exception&) {
    throw ProtocolError("embedding vector contains non-numeric entries");
  }
  if (v.empty()) throw ProtocolError("embedding service returned an empty vector");
  if (spec_.dim != 0 && v.size() != spec_.dim) {
    throw ProtocolError("embedding service returned dim " + std::to_string(v.size()) + ", expected " +
                        std::to_string(spec_.dim));
  }
  try {
    normalize(v);
  } catch (const NumericError&) {
    throw ProtocolError("embedding service returned a zero vector");
  }
  if (!cache_file.empty()) write_file(cache_file, Json{{"vector", v}}.dump());
  std::lock_guard lock(mu_);
  memo_.emplace(key, v);
  return {std::move(v), id()};
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.kind == EmbedderSpec::Kind::Offline) {
    return std::make_unique<OfflineEmbedder>(spec.dim, spec.min_order, spec.max_order);
  }
  return std::make_unique<ExternalEmbedder>(spec);
}

}  // namespace topicrag
