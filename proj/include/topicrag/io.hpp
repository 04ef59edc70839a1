#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace topicrag {

using Json = nlohmann::json;

// FNV-1a over bytes. Stable across platforms; used for config hashes, the
// offline embedder and the embedding cache keys.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Hash of the canonical (sorted-key, compact) serialization.
std::string config_hash(const Json& config);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view contents);

struct JsonlLine {
  std::size_t line_no = 0;
  std::string raw;
  Json value;      // null when parsing failed
  std::string error;
};

// Reads every non-blank line. A line that fails to parse is returned with
// `error` set instead of aborting the whole file. Lines carrying a "_meta"
// key are skipped.
std::vector<JsonlLine> read_jsonl(const std::filesystem::path& path);

// Writes one compact JSON value per line, preceded by a {"_meta": ...}
// header when `meta` is not null.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows, const Json& meta = nullptr);

}  // namespace topicrag
