#include "topicrag/htrag.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "topicrag/error.hpp"
#include "topicrag/text.hpp"
#include "topicrag/ts3m.hpp"

namespace topicrag {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("index file " + path_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::vector<std::size_t>> make_postings(const std::vector<KnowledgeDoc>& docs) {
  std::map<std::string, std::vector<std::size_t>> p;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& t : std::set<std::string>(docs[i].topics.begin(), docs[i].topics.end())) p[t].push_back(i);
  }
  return p;
}

bool ranks_before(const RetrievedDoc& a, const RetrievedDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

std::string fill_template(const std::string& tmpl, const std::string& context, const std::string& query) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 9, "{context}") == 0) {
      out += context;
      i += 9;
    } else if (tmpl.compare(i, 7, "{query}") == 0) {
      out += query;
      i += 7;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

}  // namespace

Json KnowledgeDoc::to_json() const {
  Json j = {{"id", id}, {"text", text}, {"topics", topics}, {"source", source}, {"importance", importance}};
  if (!embedding.empty()) j["embedding"] = embedding;
  return j;
}

KnowledgeDoc KnowledgeDoc::from_json(const Json& j) {
  KnowledgeDoc d;
  d.id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
  d.text = j.at("text").get<std::string>();
  if (j.contains("topics")) {
    d.topics = j["topics"].get<std::vector<std::string>>();
  } else if (j.contains("topic")) {
    d.topics = {j["topic"].get<std::string>()};
  }
  if (j.contains("embedding")) d.embedding = j["embedding"].get<std::vector<double>>();
  d.source = j.value("source", "");
  d.importance = j.value("importance", 0.0);
  return d;
}

std::vector<KnowledgeDoc> load_docs(const std::filesystem::path& path) {
  std::vector<KnowledgeDoc> out;
  for (const auto& line : read_jsonl(path)) {
    const std::string where = path.string() + ":" + std::to_string(line.line_no) + ": ";
    if (!line.error.empty()) throw ValidationError(where + line.error);
    try {
      out.push_back(KnowledgeDoc::from_json(line.value));
    } catch (const Json::exception& e) {
      throw ValidationError(where + e.what());
    }
  }
  return out;
}

Index Index::build(std::vector<KnowledgeDoc> docs, const TopicGraph& graph, Embedder* embedder,
                   std::string embedder_id) {
  Index idx;
  idx.embedder_id_ = embedder ? embedder->id() : std::move(embedder_id);
  std::set<std::string> ids;
  for (auto& d : docs) {
    if (!ids.insert(d.id).second) throw ValidationError("duplicate document id '" + d.id + "'");
    if (d.topics.empty()) throw ValidationError("document '" + d.id + "' has no topic");
    for (const auto& t : d.topics) {
      if (!graph.contains(t)) throw ValidationError("document '" + d.id + "' has unknown topic '" + t + "'");
    }
    if (!(d.importance >= 0.0) || !std::isfinite(d.importance)) {
      throw ValidationError("document '" + d.id + "' importance must be a finite nonnegative number");
    }
    if (d.embedding.empty()) {
      if (!embedder) throw ValidationError("document '" + d.id + "' has no embedding and no embedder is configured");
      d.embedding = embedder->embed(d.text).values;
    }
    if (idx.dim_ == 0) idx.dim_ = d.embedding.size();
    if (d.embedding.size() != idx.dim_) {
      throw DimensionError("document '" + d.id + "' embedding has dim " + std::to_string(d.embedding.size()) +
                           ", index dim is " + std::to_string(idx.dim_));
    }
    double norm = 0.0;
    for (double v : d.embedding) norm += v * v;
    if (!(norm > 0.0) || !std::isfinite(norm)) throw ValidationError("document '" + d.id + "' embedding is zero or not finite");
    normalize(d.embedding);
  }
  idx.postings_ = make_postings(docs);
  idx.docs_ = std::move(docs);
  return idx;
}

void Index::save(const std::filesystem::path& path, const std::string& config_hash) const {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u64(docs_.size());
  w.str(embedder_id_);
  w.str(config_hash.empty() ? config_hash_ : config_hash);
  for (const auto& d : docs_) {
    w.str(d.id);
    w.str(d.text);
    w.str(d.source);
    w.f64(d.importance);
    w.u32(static_cast<std::uint32_t>(d.topics.size()));
    for (const auto& t : d.topics) w.str(t);
  }
  for (const auto& d : docs_) {
    for (double v : d.embedding) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(postings_.size()));
  for (const auto& [topic, list] : postings_) {
    w.str(topic);
    w.u64(list.size());
    for (auto i : list) w.u64(i);
  }
  write_file(path, w.bytes());
}

Index Index::load(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader r(data, path.string());
  if (r.raw(4) != std::string(kMagic, 4)) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kIndexVersion) r.fail("unsupported version " + std::to_string(version));
  Index idx;
  idx.dim_ = r.u32();
  const std::uint64_t n = r.u64();
  idx.embedder_id_ = r.str();
  idx.config_hash_ = r.str();
  if (n > data.size()) r.fail("document count out of range");
  idx.docs_.resize(n);
  for (auto& d : idx.docs_) {
    d.id = r.str();
    d.text = r.str();
    d.source = r.str();
    d.importance = r.f64();
    const std::uint32_t nt = r.u32();
    for (std::uint32_t t = 0; t < nt; ++t) d.topics.push_back(r.str());
  }
  for (auto& d : idx.docs_) {
    d.embedding.resize(idx.dim_);
    for (auto& v : d.embedding) v = r.f64();
  }
  const std::uint32_t np = r.u32();
  for (std::uint32_t p = 0; p < np; ++p) {
    std::string topic = r.str();
    const std::uint64_t len = r.u64();
    if (len > n) r.fail("posting list longer than the doc table");
    std::vector<std::size_t> list(len);
    for (auto& i : list) {
      i = r.u64();
      if (i >= n) r.fail("posting refers to a missing document");
    }
    idx.postings_[std::move(topic)] = std::move(list);
  }
  if (!r.done()) r.fail("trailing bytes");
  if (idx.postings_ != make_postings(idx.docs_)) r.fail("posting lists disagree with the doc table");
  return idx;
}

std::vector<std::size_t> Index::candidates(const TopicGraph& graph, const std::string& topic, std::size_t radius) const {
  std::set<std::size_t> out;
  for (const auto& t : graph.within(topic, radius)) {
    auto it = postings_.find(t);
    if (it != postings_.end()) out.insert(it->second.begin(), it->second.end());
  }
  return {out.begin(), out.end()};
}

Json RetrievalResult::to_json() const {
  Json hits_json = Json::array();
  for (const auto& h : hits) {
    hits_json.push_back({{"id", h.id}, {"score", h.score}, {"cosine", h.cosine}, {"stage", h.stage}});
  }
  return {{"query", query}, {"topic", topic}, {"hits", hits_json}};
}

RetrievalResult retrieve(const Index& index, const TopicGraph& graph, std::span<const double> query_embedding,
                         const std::string& topic, std::size_t k, const RetrieveOptions& opts,
                         const std::string& query_text) {
  if (k == 0) throw ValidationError("retrieval needs k >= 1");
  RetrievalResult res{query_text, topic, {}};
  if (index.empty()) return res;
  if (query_embedding.size() != index.dim()) {
    throw DimensionError("query embedding has dim " + std::to_string(query_embedding.size()) + ", index dim is " +
                         std::to_string(index.dim()));
  }
  if (!topic.empty() && !graph.contains(topic)) throw ValidationError("unknown topic '" + topic + "'");
  const auto& docs = index.docs();
  std::vector<bool> is_candidate(docs.size(), false);
  std::vector<RetrievedDoc> stage1;
  if (!topic.empty()) {
    for (auto i : index.candidates(graph, topic, opts.radius)) {
      is_candidate[i] = true;
      const double c = cosine(query_embedding, docs[i].embedding);
      stage1.push_back({docs[i].id, i, c * (1.0 + docs[i].importance), c, "topic"});
    }
  }
  std::sort(stage1.begin(), stage1.end(), ranks_before);
  if (stage1.size() >= k) {
    stage1.resize(k);
    res.hits = std::move(stage1);
    return res;
  }
  std::vector<RetrievedDoc> backfill;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (is_candidate[i]) continue;
    const double c = cosine(query_embedding, docs[i].embedding);
    backfill.push_back({docs[i].id, i, c, c, "backfill"});
  }
  std::sort(backfill.begin(), backfill.end(), ranks_before);
  backfill.resize(std::min(backfill.size(), k - stage1.size()));
  res.hits = std::move(stage1);
  res.hits.insert(res.hits.end(), backfill.begin(), backfill.end());
  std::sort(res.hits.begin(), res.hits.end(), ranks_before);
  return res;
}

RetrievalResult retrieve(const Index& index, const TopicGraph& graph, Embedder& embedder,
                         const std::string& query_text, const TopicIndicator& indicator, std::size_t k,
                         const RetrieveOptions& opts) {
  const Embedding q = embedder.embed(query_text);
  return retrieve(index, graph, q.values, indicator.predicted_topic, k, opts, query_text);
}

std::size_t count_tokens(std::string_view s) { return text::tokenize_with_offsets(s).size(); }

AssembledPrompt assemble_prompt(const std::string& query, const RetrievalResult& result, const Index& index,
                                const PromptOptions& opts) {
  AssembledPrompt out;
  if (result.hits.empty()) {
    out.prompt = query;
    out.tokens = count_tokens(query);
    if (out.tokens > opts.token_budget) {
      throw ValidationError("query alone has " + std::to_string(out.tokens) + " tokens, over the budget of " +
                            std::to_string(opts.token_budget));
    }
    return out;
  }
  struct Chunk {
    std::string id;
    std::string text;
    std::vector<text::Token> tokens;
    std::size_t keep;
  };
  std::vector<Chunk> chunks;
  for (const auto& h : result.hits) {
    const std::string& t = index.docs().at(h.index).text;
    auto toks = text::tokenize_with_offsets(t);
    const std::size_t n = toks.size();
    chunks.push_back({h.id, t, std::move(toks), n});
  }
  auto chunk_text = [](const Chunk& c) {
    if (c.keep == c.tokens.size()) return c.text;
    return c.keep == 0 ? std::string() : c.text.substr(0, c.tokens[c.keep - 1].end);
  };
  auto render = [&]() {
    std::string context;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      context += "[" + std::to_string(i + 1) + "] " + chunk_text(chunks[i]) + "\n";
    }
    return fill_template(opts.prompt_template, context, query);
  };

  const std::size_t base = count_tokens(fill_template(opts.prompt_template, "", query));
  if (base > opts.token_budget) {
    throw ValidationError("query and template have " + std::to_string(base) + " tokens, over the budget of " +
                          std::to_string(opts.token_budget));
  }
  while (!chunks.empty() && count_tokens(render()) > opts.token_budget) {
    Chunk& last = chunks.back();
    // Largest prefix of the last chunk that fits; 0 drops it.
    std::size_t lo = 0, hi = last.tokens.size() == 0 ? 0 : last.tokens.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      last.keep = mid;
      if (count_tokens(render()) <= opts.token_budget) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    last.keep = lo;
    if (lo == 0) chunks.pop_back();
  }
  out.prompt = render();
  out.tokens = count_tokens(out.prompt);
  for (const auto& c : chunks) {
    out.cited.push_back(c.id);
    out.kept_tokens.push_back(c.keep);
  }
  return out;
}

Json Generation::to_json() const { return {{"text", text}, {"cited", cited}, {"prompt", prompt}}; }

Generation integrate_and_generate(const std::string& query, const RetrievalResult& result, const Index& index,
                                  GenerationClient& generator, const PromptOptions& opts) {
  const AssembledPrompt p = assemble_prompt(query, result, index, opts);
  Generation g{{}, p.prompt, p.cited};
  try {
    g.text = generator.generate({p.prompt, opts.max_tokens});
  } catch (const Error& e) {
    throw GenerationError(std::string("generator failed: ") + e.what(), p.prompt);
  }
  return g;
}

}  // namespace topicrag
