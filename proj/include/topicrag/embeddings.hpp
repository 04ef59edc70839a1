#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "topicrag/client.hpp"
#include "topicrag/io.hpp"

namespace topicrag {

// Unit-norm text embedding.
struct Embedding {
  std::vector<double> values;
  std::string provider;

  std::size_t dim() const noexcept { return values.size(); }
};

struct EmbedderSpec {
  enum class Kind { Offline, External };

  Kind kind = Kind::Offline;
  std::size_t dim = 256;
  // Offline: character n-gram orders [min_order, max_order].
  std::size_t min_order = 1;
  std::size_t max_order = 3;
  // External.
  std::string endpoint;
  std::string model;
  std::filesystem::path cache_dir;
  RetryPolicy retry;

  static EmbedderSpec from_json(const Json& j);
  Json to_json() const;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  // Throws ValidationError for empty text.
  virtual Embedding embed(std::string_view text) = 0;
  virtual std::string id() const = 0;
};

// Signed feature hashing of character n-grams into `dim` buckets, then L2
// normalization. Pure and platform-independent.
class OfflineEmbedder : public Embedder {
 public:
  explicit OfflineEmbedder(std::size_t dim = 256, std::size_t min_order = 1, std::size_t max_order = 3);
  Embedding embed(std::string_view text) override;
  std::string id() const override;

 private:
  std::size_t dim_, min_order_, max_order_;
};

// Client for a remote embedding service:
//   request  {"model": str, "input": [str]}
//   response {"vectors": [[float, ...]]}
// Results are cached by content hash in memory and, when cache_dir is set,
// as one JSON file per key on disk.
class ExternalEmbedder : public Embedder {
 public:
  explicit ExternalEmbedder(EmbedderSpec spec);
  Embedding embed(std::string_view text) override;
  std::string id() const override { return "external:" + spec_.model; }
  // Cache misses that went to the remote service.
  std::size_t remote_calls() const noexcept { return calls_.load(); }

 private:
  std::string cache_key(std::string_view text) const;

  EmbedderSpec spec_;
  std::mutex mu_;
  std::unordered_map<std::string, std::vector<double>> memo_;
  std::atomic<std::size_t> calls_{0};
};

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

// Scales to unit L2 norm; throws NumericError for an all-zero vector.
void normalize(std::vector<double>& v);

// Dot product of two unit vectors. Throws DimensionError on mismatch.
double cosine(std::span<const double> a, std::span<const double> b);
inline double cosine(const Embedding& a, const Embedding& b) { return cosine(a.values, b.values); }

}  // namespace topicrag
