#include "topicrag/sample.hpp"

#include "topicrag/error.hpp"
#include "topicrag/text.hpp"

namespace topicrag {

std::size_t InstructionSample::char_length() const {
  return text::code_point_count(question) + text::code_point_count(answer);
}

Json InstructionSample::to_json(bool with_embedding) const {
  Json j = {{"id", id}, {"question", question}, {"answer", answer}, {"source", source}};
  if (intent) j["intent"] = *intent;
  if (topic) j["topic"] = *topic;
  if (with_embedding && embedding) j["embedding"] = embedding->values;
  return j;
}

InstructionSample InstructionSample::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("sample record is not an object");
  auto str = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key) || j[key].is_null()) {
      if (required) throw ValidationError(std::string("sample record lacks \"") + key + "\": " + j.dump());
      return {};
    }
    if (!j[key].is_string()) throw ValidationError(std::string("sample field \"") + key + "\" must be a string");
    return j[key].get<std::string>();
  };
  InstructionSample s;
  if (j.contains("id") && j["id"].is_number_integer()) {
    s.id = std::to_string(j["id"].get<long long>());
  } else {
    s.id = str("id", true);
  }
  s.question = str("question", true);
  s.answer = str("answer", true);
  s.source = str("source", false);
  if (j.contains("intent") && !j["intent"].is_null()) s.intent = str("intent", true);
  if (j.contains("topic") && !j["topic"].is_null()) s.topic = str("topic", true);
  if (j.contains("embedding") && j["embedding"].is_array()) {
    s.embedding = Embedding{j["embedding"].get<std::vector<double>>(), "file"};
  }
  return s;
}

bool is_known_source(const std::string& source) {
  return source == "public-account" || source == "authoritative" || source == "knowledge-graph" ||
         source == "public-dataset";
}

std::vector<InstructionSample> load_samples(const std::filesystem::path& path) {
  std::vector<InstructionSample> out;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(line.line_no) + ": " + line.error);
    }
    out.push_back(InstructionSample::from_json(line.value));
  }
  return out;
}

void save_samples(const std::filesystem::path& path, const std::vector<InstructionSample>& samples,
                  const Json& meta) {
  std::vector<Json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(s.to_json());
  write_jsonl(path, rows, meta);
}

}  // namespace topicrag
