#include "topicrag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

#include "topicrag/error.hpp"
#include "topicrag/text.hpp"

namespace topicrag {

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string substitute(const std::string& tmpl, const std::string& key, const std::string& value) {
  std::string out;
  const std::string marker = "{" + key + "}";
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = tmpl.find(marker, pos);
    if (hit == std::string::npos) break;
    out.append(tmpl, pos, hit - pos);
    out += value;
    pos = hit + marker.size();
  }
  out.append(tmpl, pos);
  return out;
}

// Code points covered by non-overlapping occurrences of any pattern in `lower`.
std::size_t covered_code_points(const std::string& lower, const std::vector<std::string>& patterns) {
  std::size_t covered = 0;
  for (std::size_t i = 0; i < lower.size();) {
    std::size_t matched = 0;
    for (const auto& p : patterns) {
      if (!p.empty() && lower.compare(i, p.size(), p) == 0) {
        matched = p.size();
        covered += text::code_point_count(p);
        break;
      }
    }
    i += matched ? matched : 1;
  }
  return covered;
}

const std::vector<std::string>& ascii_emoticons() {
  static const std::vector<std::string> kList = {":-)", ":-(", ":)", ":(", ":d", ";)", "^_^", "^^", "t_t", "qaq", "xd"};
  return kList;
}

const Embedding& require_embedding(const InstructionSample& s) {
  if (!s.embedding || s.embedding->values.empty()) {
    throw ValidationError("sample '" + s.id + "' has no embedding");
  }
  return *s.embedding;
}

std::string sample_text(const InstructionSample& s) { return s.question + "\n" + s.answer; }

}  // namespace

Json RawRecord::to_json() const { return {{"id", id}, {"text", text}, {"source", source}}; }

RawRecord RawRecord::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("passage record is not an object");
  RawRecord r;
  if (j.contains("id") && j["id"].is_number_integer()) {
    r.id = std::to_string(j["id"].get<long long>());
  } else if (j.contains("id") && j["id"].is_string()) {
    r.id = j["id"].get<std::string>();
  } else {
    throw ValidationError("passage record lacks an id: " + j.dump(-1, ' ', false, Json::error_handler_t::replace));
  }
  if (!j.contains("text") || !j["text"].is_string()) throw ValidationError("passage '" + r.id + "' lacks \"text\"");
  r.text = j["text"].get<std::string>();
  r.source = j.value("source", "");
  return r;
}

Json Rejection::to_json() const {
  Json j = {{"id", id}, {"stage", stage}, {"cause", cause}};
  if (!detail.empty()) j["detail"] = detail;
  if (quarantined) j["quarantined"] = true;
  return j;
}

Json RuleFilterConfig::to_json() const {
  return {{"min_chars", min_chars},
          {"max_emoticon_ratio", max_emoticon_ratio},
          {"max_filler_ratio", max_filler_ratio},
          {"filler_words", filler_words}};
}

RuleFilterConfig RuleFilterConfig::from_json(const Json& j) {
  RuleFilterConfig c;
  c.min_chars = j.value("min_chars", c.min_chars);
  c.max_emoticon_ratio = j.value("max_emoticon_ratio", c.max_emoticon_ratio);
  c.max_filler_ratio = j.value("max_filler_ratio", c.max_filler_ratio);
  if (j.contains("filler_words")) c.filler_words = j["filler_words"].get<std::vector<std::string>>();
  return c;
}

FilterResult rule_filter(const std::vector<RawRecord>& records, const RuleFilterConfig& cfg) {
  FilterResult out;
  for (const char* rule : {"invalid_utf8", "emoticon_density", "filler_density", "too_short"}) out.report[rule] = 0;
  std::vector<std::string> fillers;
  for (const auto& f : cfg.filler_words) fillers.push_back(ascii_lower(f));

  for (const auto& rec : records) {
    auto reject = [&](const char* rule, std::string detail, bool quarantine = false) {
      ++out.report[rule];
      out.rejected.push_back({rec.id, "filter", rule, std::move(detail), quarantine});
    };
    const auto cps = text::decode_utf8(rec.text);
    if (!cps) {
      reject("invalid_utf8", "text is not valid UTF-8", true);
      continue;
    }
    std::size_t visible = 0, emoji = 0;
    for (char32_t cp : *cps) {
      if (text::is_space(cp)) continue;
      ++visible;
      if (text::is_emoji(cp)) ++emoji;
    }
    const std::string lower = ascii_lower(rec.text);
    emoji += covered_code_points(lower, ascii_emoticons());
    const double denom = static_cast<double>(std::max<std::size_t>(visible, 1));
    if (visible > 0 && static_cast<double>(emoji) / denom > cfg.max_emoticon_ratio) {
      reject("emoticon_density", std::to_string(emoji) + "/" + std::to_string(visible));
      continue;
    }
    const std::size_t filler = covered_code_points(lower, fillers);
    if (visible > 0 && static_cast<double>(filler) / denom > cfg.max_filler_ratio) {
      reject("filler_density", std::to_string(filler) + "/" + std::to_string(visible));
      continue;
    }
    std::string normalized = text::normalize_whitespace(rec.text);
    if (text::code_point_count(normalized) < cfg.min_chars) {
      reject("too_short", std::to_string(text::code_point_count(normalized)) + " chars");
      continue;
    }
    out.kept.push_back({rec.id, std::move(normalized), rec.source});
  }
  return out;
}

RelevanceVerdict llm_relevance_filter(const RawRecord& record, GenerationClient& client,
                                      const std::string& prompt_template) {
  RelevanceVerdict v;
  try {
    v.raw_response = client.generate({substitute(prompt_template, "text", record.text), 8});
  } catch (const Error& e) {
    v.error = e.what();
    return v;
  }
  const std::string answer = text::trim(v.raw_response);
  if (answer == "1") {
    v.decision = Relevance::kKeep;
  } else if (answer == "0") {
    v.decision = Relevance::kDrop;
  } else {
    v.error = "unparseable relevance reply";
  }
  return v;
}

std::size_t token_overlap(const std::string& question, const std::string& text) {
  std::set<std::string> wanted;
  for (auto& t : text::tokenize(question)) {
    const auto cps = text::decode_utf8(t);
    if (cps && cps->size() == 1 && text::is_punct((*cps)[0])) continue;
    wanted.insert(ascii_lower(t));
  }
  std::size_t hits = 0;
  std::unordered_set<std::string> present;
  for (auto& t : text::tokenize(text)) present.insert(ascii_lower(t));
  for (const auto& w : wanted) hits += present.count(w);
  return hits;
}

AnswerWindow best_answer_window(const std::string& question, const std::vector<std::string>& sentences,
                                std::size_t max_sentences) {
  if (sentences.empty()) throw ValidationError("passage has no sentences");
  if (max_sentences == 0) throw ConfigError("max_sentences must be >= 1");
  AnswerWindow best;
  bool have = false;
  // Widths ascending, then starts ascending: strict improvement keeps the tie rule.
  for (std::size_t width = 1; width <= std::min(max_sentences, sentences.size()); ++width) {
    for (std::size_t first = 0; first + width <= sentences.size(); ++first) {
      std::string joined;
      for (std::size_t i = first; i < first + width; ++i) joined += sentences[i] + "\n";
      const std::size_t ov = token_overlap(question, joined);
      if (!have || ov > best.overlap) {
        best = {first, first + width - 1, ov};
        have = true;
      }
    }
  }
  return best;
}

std::vector<std::string> parse_questions(const std::string& reply) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= reply.size()) {
    std::size_t end = reply.find('\n', start);
    if (end == std::string::npos) end = reply.size();
    std::string line = text::trim(std::string_view(reply).substr(start, end - start));
    start = end + 1;
    // Strip "1." / "2)" / "3、" numbering, bullets, and Q:/问： prefixes.
    std::size_t i = 0;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
      line = text::trim(std::string_view(line).substr(i + 1));
    } else if (i > 0 && line.compare(i, 3, "、") == 0) {
      line = text::trim(std::string_view(line).substr(i + 3));
    }
    for (const char* prefix : {"- ", "* ", "Q:", "q:", "问：", "问:"}) {
      const std::string p(prefix);
      if (line.rfind(p, 0) == 0) {
        line = text::trim(std::string_view(line).substr(p.size()));
        break;
      }
    }
    if (!line.empty()) out.push_back(std::move(line));
    if (end == reply.size()) break;
  }
  return out;
}

std::vector<InstructionSample> generate_qa(const RawRecord& passage, GenerationClient& client, const QaConfig& cfg) {
  const std::string reply = client.generate({substitute(cfg.prompt_template, "text", passage.text), 512});
  auto questions = parse_questions(reply);
  if (questions.size() > cfg.max_questions) questions.resize(cfg.max_questions);
  const auto sentences = text::split_sentences(passage.text);
  std::vector<InstructionSample> out;
  if (sentences.empty()) return out;
  for (std::size_t q = 0; q < questions.size(); ++q) {
    const AnswerWindow w = best_answer_window(questions[q], sentences, cfg.max_sentences);
    std::string answer;
    for (std::size_t i = w.first; i <= w.last; ++i) {
      if (!answer.empty()) answer += ' ';
      answer += sentences[i];
    }
    InstructionSample s;
    s.id = passage.id + "-q" + std::to_string(q + 1);
    s.question = questions[q];
    s.answer = std::move(answer);
    s.source = passage.source;
    out.push_back(std::move(s));
  }
  return out;
}

DedupResult threshold_dedup(const std::vector<InstructionSample>& samples, double tau) {
  const std::size_t n = samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; });
  std::vector<const Embedding*> emb(n);
  std::vector<std::size_t> length(n);
  for (std::size_t i = 0; i < n; ++i) {
    emb[i] = &require_embedding(samples[i]);
    length[i] = samples[i].char_length();
  }
  for (std::size_t r = 1; r < n; ++r) {
    if (samples[order[r]].id == samples[order[r - 1]].id) {
      throw ValidationError("duplicate sample id '" + samples[order[r]].id + "'");
    }
  }

  DedupResult out;
  std::vector<bool> alive(n, true);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    for (std::size_t q = r + 1; q < n && alive[i]; ++q) {
      const std::size_t j = order[q];
      if (!alive[j]) continue;
      const double c = cosine(*emb[i], *emb[j]);
      if (!(c > tau)) continue;
      // j has the later id, so it loses ties.
      const bool drop_i = length[i] < length[j];
      const std::size_t loser = drop_i ? i : j, winner = drop_i ? j : i;
      alive[loser] = false;
      out.removed.push_back({samples[loser].id, samples[winner].id, c});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (alive[i]) out.kept.push_back(samples[i]);
  }
  return out;
}

KeywordIntentClassifier::KeywordIntentClassifier(std::vector<Rule> rules) : rules_(std::move(rules)) {
  for (auto& [kw, intent] : rules_) kw = ascii_lower(kw);
}

std::vector<KeywordIntentClassifier::Rule> KeywordIntentClassifier::default_rules() {
  return {
      {"怎么做", "recipe-how-to"},   {"做法", "recipe-how-to"},      {"如何做", "recipe-how-to"},
      {"how to make", "recipe-how-to"}, {"how do i cook", "recipe-how-to"}, {"recipe", "recipe-how-to"},
      {"能吃吗", "food-safety"},     {"可以吃", "food-safety"},      {"安全", "food-safety"},
      {"过期", "food-safety"},       {"变质", "food-safety"},        {"safe to eat", "food-safety"},
      {"expired", "food-safety"},    {"热量", "nutrition-facts"},    {"卡路里", "nutrition-facts"},
      {"营养", "nutrition-facts"},   {"维生素", "nutrition-facts"},  {"蛋白质", "nutrition-facts"},
      {"calorie", "nutrition-facts"}, {"nutrient", "nutrition-facts"}, {"vitamin", "nutrition-facts"},
      {"protein", "nutrition-facts"}, {"减肥", "diet-advice"},       {"健康", "diet-advice"},
      {"饮食建议", "diet-advice"},   {"diet", "diet-advice"},        {"healthy", "diet-advice"},
      {"味道", "flavor"},            {"口感", "flavor"},             {"好吃", "flavor"},
      {"taste", "flavor"},           {"flavor", "flavor"},
  };
}

std::string KeywordIntentClassifier::classify(const InstructionSample& sample) {
  const std::string q = ascii_lower(sample.question);
  for (const auto& [kw, intent] : rules_) {
    if (q.find(kw) != std::string::npos) return intent;
  }
  return kOtherIntent;
}

ClientIntentClassifier::ClientIntentClassifier(GenerationClient& client, std::vector<std::string> labels)
    : client_(client), labels_(std::move(labels)) {}

std::string ClientIntentClassifier::classify(const InstructionSample& sample) {
  std::string prompt = "Name the core intent of the question below. Reply with exactly one of: ";
  for (std::size_t i = 0; i < labels_.size(); ++i) prompt += (i ? ", " : "") + labels_[i];
  prompt += ".\n\nQuestion: " + sample.question;
  std::string reply;
  try {
    reply = text::trim(client_.generate({prompt, 16}));
  } catch (const Error&) {
    return kOtherIntent;
  }
  return std::find(labels_.begin(), labels_.end(), reply) != labels_.end() ? reply : std::string(kOtherIntent);
}

std::vector<InstructionSample> extract_intents(const std::vector<InstructionSample>& samples,
                                               IntentClassifier& classifier) {
  std::vector<InstructionSample> out = samples;
  for (auto& s : out) {
    std::string intent = classifier.classify(s);
    s.intent = intent.empty() ? std::string(kOtherIntent) : std::move(intent);
  }
  return out;
}

double IntentDistribution::weight(const std::string& intent) const {
  auto it = weights.find(intent);
  if (it == weights.end()) throw ValidationError("intent '" + intent + "' is not in the distribution");
  return it->second;
}

Json IntentDistribution::to_json() const { return {{"total", total}, {"counts", counts}, {"weights", weights}}; }

IntentDistribution intent_distribution(const std::vector<InstructionSample>& samples) {
  if (samples.empty()) throw ValidationError("intent distribution of an empty sample set");
  IntentDistribution d;
  for (const auto& s : samples) {
    if (!s.intent) throw ValidationError("sample '" + s.id + "' has no intent label");
    ++d.counts[*s.intent];
  }
  d.total = samples.size();
  for (const auto& [intent, c] : d.counts) d.weights[intent] = static_cast<double>(c) / static_cast<double>(d.total);
  return d;
}

Json ClusterAssignment::to_json(const std::vector<InstructionSample>& samples) const {
  Json clusters = Json::array();
  for (std::size_t c = 0; c < members.size(); ++c) {
    Json ids = Json::array();
    for (auto m : members[c]) ids.push_back(samples[m].id);
    clusters.push_back({{"cluster", c}, {"center", samples[centers[c]].id}, {"members", ids}});
  }
  Json merges_json = Json::array();
  for (const auto& m : merges) {
    merges_json.push_back({{"a", samples[m.a].id}, {"b", samples[m.b].id}, {"height", m.height}, {"size", m.size}});
  }
  return {{"clusters", clusters}, {"merges", merges_json}};
}

std::size_t default_cluster_count(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n) / 2.0))));
}

double weighted_dissimilarity(const InstructionSample& a, const InstructionSample& b, const IntentDistribution& dist) {
  if (!a.intent || !b.intent) throw ValidationError("sample '" + (a.intent ? b.id : a.id) + "' has no intent label");
  const double w = 2.0 / (dist.weight(*a.intent) + dist.weight(*b.intent));
  return (1.0 - cosine(require_embedding(a), require_embedding(b))) * w;
}

std::size_t cluster_center(const std::vector<InstructionSample>& samples, const std::vector<std::size_t>& members,
                           const IntentDistribution& dist) {
  if (members.empty()) throw ValidationError("cluster has no members");
  std::size_t best = members.front();
  double best_sum = std::numeric_limits<double>::infinity();
  for (auto m : members) {
    double total = 0.0;
    for (auto o : members) {
      if (o != m) total += weighted_dissimilarity(samples[m], samples[o], dist);
    }
    if (total < best_sum) {
      best_sum = total;
      best = m;
    }
  }
  return best;
}

ClusterAssignment weighted_ahc(const std::vector<InstructionSample>& samples, const IntentDistribution& dist,
                               const AhcOptions& opts) {
  const std::size_t n = samples.size();
  if (n == 0) throw ValidationError("clustering needs at least one sample");
  std::size_t k = 1;
  if (opts.k) {
    k = *opts.k;
  } else if (!opts.max_height) {
    k = default_cluster_count(n);
  }
  if (k == 0) throw ConfigError("cluster count must be >= 1");
  if (k > n) {
    throw ValidationError("requested " + std::to_string(k) + " clusters from only " + std::to_string(n) + " samples");
  }

  // link[i][j] holds the average linkage between the clusters keyed by their smallest members i and j.
  std::vector<std::vector<double>> link(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) link[i][j] = link[j][i] = weighted_dissimilarity(samples[i], samples[j], dist);
  }
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), std::size_t{0});

  ClusterAssignment out;
  while (active.size() > k) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t x = 0; x < active.size(); ++x) {
      const auto& row = link[active[x]];
      for (std::size_t y = x + 1; y < active.size(); ++y) {
        if (row[active[y]] < best) {
          best = row[active[y]];
          bi = x;
          bj = y;
        }
      }
    }
    if (opts.max_height && best > *opts.max_height) break;
    const std::size_t a = active[bi], b = active[bj];
    const double na = static_cast<double>(members[a].size()), nb = static_cast<double>(members[b].size());
    for (auto c : active) {
      if (c == a || c == b) continue;
      link[a][c] = link[c][a] = (na * link[a][c] + nb * link[b][c]) / (na + nb);
    }
    std::vector<std::size_t> merged;
    std::merge(members[a].begin(), members[a].end(), members[b].begin(), members[b].end(), std::back_inserter(merged));
    members[a] = std::move(merged);
    members[b].clear();
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
    out.merges.push_back({a, b, best, members[a].size()});
  }

  out.cluster_of.assign(n, 0);
  for (auto key : active) {
    const std::size_t c = out.members.size();
    for (auto m : members[key]) out.cluster_of[m] = c;
    out.members.push_back(members[key]);
    out.centers.push_back(cluster_center(samples, members[key], dist));
  }
  return out;
}

Json ScreeningEntry::to_json() const {
  Json j = {{"id", id}, {"cluster", cluster}, {"cause", cause}, {"cosine", cosine}};
  if (other_cluster) j["other_cluster"] = *other_cluster;
  return j;
}

SelectionResult select_representatives(const std::vector<InstructionSample>& samples,
                                       const ClusterAssignment& assignment, double threshold) {
  SelectionResult out;
  std::vector<std::size_t> kept_clusters;
  for (std::size_t c = 0; c < assignment.members.size(); ++c) {
    const std::size_t center = assignment.centers.at(c);
    const Embedding& ce = require_embedding(samples.at(center));
    for (auto m : assignment.members[c]) {
      if (m != center) {
        out.log.push_back({samples[m].id, c, "cluster_member", std::nullopt, cosine(require_embedding(samples[m]), ce)});
      }
    }
    std::optional<std::size_t> clash;
    double clash_cos = 0.0;
    for (auto other : kept_clusters) {
      const double cs = cosine(ce, require_embedding(samples[assignment.centers[other]]));
      if (cs > threshold) {
        clash = other;
        clash_cos = cs;
        break;
      }
    }
    if (clash) {
      out.log.push_back({samples[center].id, c, "near_other_center", clash, clash_cos});
      ++out.representatives_dropped;
    } else {
      out.log.push_back({samples[center].id, c, "representative", std::nullopt, 1.0});
      out.kept.push_back(samples[center]);
      kept_clusters.push_back(c);
    }
  }
  return out;
}

Json MinitestReport::to_json() const {
  return {{"total", total},
          {"tp", counts.tp},
          {"fp", counts.fp},
          {"tn", counts.tn},
          {"fn", counts.fn},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1}};
}

MinitestReport score_confusion(const ConfusionCounts& c) {
  MinitestReport r;
  r.counts = c;
  r.total = c.tp + c.fp + c.tn + c.fn;
  if (r.total == 0) throw ValidationError("similarity mini-test on an empty pair set");
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(r.total);
  r.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  r.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  if (c.tp + c.fp + c.fn == 0) {
    r.f1 = 1.0;
  } else {
    r.f1 = static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  }
  return r;
}

MinitestReport eval_similarity_minitest(const std::vector<LabeledPair>& pairs, Embedder& embedder, double tau) {
  if (pairs.empty()) throw ValidationError("similarity mini-test on an empty pair set");
  ConfusionCounts c;
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw ValidationError("pair label must be 0 or 1");
    const bool predicted = cosine(embedder.embed(p.a), embedder.embed(p.b)) > tau;
    if (predicted && p.label == 1) ++c.tp;
    if (predicted && p.label == 0) ++c.fp;
    if (!predicted && p.label == 0) ++c.tn;
    if (!predicted && p.label == 1) ++c.fn;
  }
  return score_confusion(c);
}

std::vector<LabeledPair> load_pairs(const std::filesystem::path& path) {
  std::vector<LabeledPair> out;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) throw ValidationError(path.string() + ":" + std::to_string(line.line_no) + ": " + line.error);
    const Json& j = line.value;
    if (!j.contains("a") || !j.contains("b") || !j.contains("label")) {
      throw ValidationError(path.string() + ":" + std::to_string(line.line_no) + ": pair needs a, b and label");
    }
    out.push_back({j["a"].get<std::string>(), j["b"].get<std::string>(), j["label"].get<int>()});
  }
  return out;
}

void embed_samples(std::vector<InstructionSample>& samples, Embedder& embedder) {
  for (auto& s : samples) {
    if (!s.embedding) s.embedding = embedder.embed(sample_text(s));
  }
}

}  // namespace topicrag
