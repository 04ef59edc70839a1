#pragma once

#include <optional>
#include <string>
#include <vector>

#include "topicrag/embeddings.hpp"
#include "topicrag/io.hpp"

namespace topicrag {

// One question-answer pair moving through curation and training.
struct InstructionSample {
  std::string id;
  std::string question;
  std::string answer;
  std::string source;  // public-account | authoritative | knowledge-graph | public-dataset
  std::optional<std::string> intent;
  std::optional<std::string> topic;
  std::optional<Embedding> embedding;

  // question + answer length in code points; the dedup tie-breaker.
  std::size_t char_length() const;

  // Dataset line schema. The embedding is written only when `with_embedding`.
  Json to_json(bool with_embedding = false) const;
  // Throws ValidationError for missing id/question/answer fields.
  static InstructionSample from_json(const Json& j);
};

bool is_known_source(const std::string& source);

std::vector<InstructionSample> load_samples(const std::filesystem::path& path);
void save_samples(const std::filesystem::path& path, const std::vector<InstructionSample>& samples,
                  const Json& meta = nullptr);

}  // namespace topicrag
