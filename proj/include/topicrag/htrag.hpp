#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "topicrag/client.hpp"
#include "topicrag/embeddings.hpp"
#include "topicrag/io.hpp"
#include "topicrag/topic_graph.hpp"

namespace topicrag {

struct TopicIndicator;

struct KnowledgeDoc {
  std::string id;
  std::string text;
  std::vector<std::string> topics;
  std::vector<double> embedding;  // filled by the embedder when empty
  std::string source;
  double importance = 0.0;

  Json to_json() const;
  static KnowledgeDoc from_json(const Json& j);
};

std::vector<KnowledgeDoc> load_docs(const std::filesystem::path& path);

// Exact flat index with per-topic posting lists. Immutable once built.
class Index {
 public:
  Index() = default;

  // Embeds documents without an embedding, normalizes all of them, and checks
  // dims, ids and topics. Throws ValidationError/DimensionError naming the doc.
  static Index build(std::vector<KnowledgeDoc> docs, const TopicGraph& graph, Embedder* embedder = nullptr,
                     std::string embedder_id = {});

  // Binary file: "TRIX" magic, version, dims, doc table, embedding block,
  // posting lists. Little endian throughout.
  void save(const std::filesystem::path& path, const std::string& config_hash = {}) const;
  static Index load(const std::filesystem::path& path);

  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<KnowledgeDoc>& docs() const noexcept { return docs_; }
  const std::map<std::string, std::vector<std::size_t>>& postings() const noexcept { return postings_; }
  const std::string& embedder_id() const noexcept { return embedder_id_; }
  const std::string& config_hash() const noexcept { return config_hash_; }

  // Ascending doc indices tagged with any topic within `radius` of `topic`.
  std::vector<std::size_t> candidates(const TopicGraph& graph, const std::string& topic, std::size_t radius) const;

 private:
  std::vector<KnowledgeDoc> docs_;
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<std::size_t>> postings_;
  std::string embedder_id_;
  std::string config_hash_;
};

struct RetrievedDoc {
  std::string id;
  std::size_t index = 0;
  double score = 0.0;
  double cosine = 0.0;
  std::string stage;  // "topic" or "backfill"
};

struct RetrievalResult {
  std::string query;
  std::string topic;
  std::vector<RetrievedDoc> hits;  // score descending, id ascending on ties

  Json to_json() const;
};

struct RetrieveOptions {
  std::size_t radius = 1;
};

// Stage 1 takes docs whose topics lie within `radius` of `topic` and scores
// them cosine * (1 + importance). When fewer than k qualify, the best
// remaining docs by plain cosine fill the gap. An empty topic skips stage 1.
RetrievalResult retrieve(const Index& index, const TopicGraph& graph, std::span<const double> query_embedding,
                         const std::string& topic, std::size_t k, const RetrieveOptions& opts = {},
                         const std::string& query_text = {});

RetrievalResult retrieve(const Index& index, const TopicGraph& graph, Embedder& embedder,
                         const std::string& query_text, const TopicIndicator& indicator, std::size_t k,
                         const RetrieveOptions& opts = {});

inline constexpr const char* kDefaultRagTemplate = "Reference material:\n{context}\nQuestion: {query}\nAnswer:";

struct PromptOptions {
  std::string prompt_template = kDefaultRagTemplate;  // {context} and {query} placeholders
  std::size_t token_budget = 1500;
  int max_tokens = 512;
};

struct AssembledPrompt {
  std::string prompt;
  std::vector<std::string> cited;     // doc ids whose text made it into the prompt
  std::vector<std::size_t> kept_tokens;  // per cited doc
  std::size_t tokens = 0;
};

std::size_t count_tokens(std::string_view s);

// Chunks in rank order then the query. Over budget, the lowest-ranked chunk
// is cut from its end first and dropped once empty. With no hits the prompt
// is the query alone. Throws ValidationError if the query alone is over budget.
AssembledPrompt assemble_prompt(const std::string& query, const RetrievalResult& result, const Index& index,
                                const PromptOptions& opts = {});

struct Generation {
  std::string text;
  std::string prompt;
  std::vector<std::string> cited;

  Json to_json() const;
};

// Generator failures surface as GenerationError carrying the prompt.
Generation integrate_and_generate(const std::string& query, const RetrievalResult& result, const Index& index,
                                  GenerationClient& generator, const PromptOptions& opts = {});

}  // namespace topicrag
