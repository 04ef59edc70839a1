#include "topicrag/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "topicrag/error.hpp"

namespace topicrag {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_hash(const Json& config) {
  return hex64(fnv1a64(config.dump(-1, ' ', false, Json::error_handler_t::replace)));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<JsonlLine> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<JsonlLine> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    JsonlLine rec{no, line, nullptr, {}};
    try {
      rec.value = Json::parse(line);
    } catch (const Json::exception& e) {
      rec.error = e.what();
      out.push_back(std::move(rec));
      continue;
    }
    if (rec.value.is_object() && rec.value.contains("_meta")) continue;
    out.push_back(std::move(rec));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows, const Json& meta) {
  std::string body;
  constexpr auto kReplace = Json::error_handler_t::replace;
  if (!meta.is_null()) body += Json{{"_meta", meta}}.dump(-1, ' ', false, kReplace) + "\n";
  for (const auto& row : rows) body += row.dump(-1, ' ', false, kReplace) + "\n";
  write_file(path, body);
}

}  // namespace topicrag
