#include "topicrag/eval.hpp"

#include <algorithm>
#include <set>

#include "topicrag/error.hpp"
#include "topicrag/metrics.hpp"
#include "topicrag/rng.hpp"
#include "topicrag/text.hpp"

namespace topicrag {

namespace {

bool ascii_letter(char32_t cp) { return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z'); }

std::string line_error(const std::filesystem::path& path, const JsonlLine& line, const std::string& what) {
  return path.string() + ":" + std::to_string(line.line_no) + ": " + what;
}

template <typename T, typename Parse>
std::vector<T> load_lines(const std::filesystem::path& path, Parse parse) {
  std::vector<T> out;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) throw ValidationError(line_error(path, line, line.error));
    try {
      out.push_back(parse(line.value));
    } catch (const Json::exception& e) {
      throw ValidationError(line_error(path, line, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(line_error(path, line, e.what()));
    }
  }
  return out;
}

std::string id_of(const Json& j) {
  if (!j.contains("id")) throw ValidationError("record lacks an id");
  return j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
}

double percent(std::size_t correct, std::size_t total) {
  return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace

void McqItem::validate() const {
  if (options.size() < 2) throw ValidationError("MCQ item '" + id + "' needs at least two options");
  bool found = false;
  std::set<std::string> keys;
  for (const auto& [k, _] : options) {
    if (k.size() != 1 || k[0] < 'A' || k[0] > 'E') throw ValidationError("MCQ item '" + id + "' has option key '" + k + "'");
    if (!keys.insert(k).second) throw ValidationError("MCQ item '" + id + "' repeats option key '" + k + "'");
    found = found || k == gold;
  }
  if (!found) throw ValidationError("MCQ item '" + id + "' gold key '" + gold + "' is not an option");
}

Json McqItem::to_json() const {
  Json opts = Json::object();
  for (const auto& [k, v] : options) opts[k] = v;
  return {{"id", id}, {"stem", stem}, {"options", opts}, {"gold", gold}, {"exam", exam}};
}

McqItem McqItem::from_json(const Json& j) {
  McqItem m;
  m.id = id_of(j);
  m.stem = j.at("stem").get<std::string>();
  const Json& opts = j.at("options");
  if (opts.is_object()) {
    for (const auto& [k, v] : opts.items()) m.options.emplace_back(k, v.get<std::string>());
  } else {
    for (const auto& o : opts) m.options.emplace_back(o.at("key").get<std::string>(), o.at("text").get<std::string>());
  }
  m.gold = j.contains("gold") ? j["gold"].get<std::string>() : j.at("answer").get<std::string>();
  m.exam = j.value("exam", "");
  m.validate();
  return m;
}

std::vector<McqItem> load_mcq(const std::filesystem::path& path) {
  return load_lines<McqItem>(path, [](const Json& j) { return McqItem::from_json(j); });
}

std::string parse_answer_letter(const std::string& reply, const std::vector<std::string>& keys) {
  auto cps = text::decode_utf8(reply);
  if (!cps) return {};
  for (auto& cp : *cps) {
    if (cp >= 0xFF21 && cp <= 0xFF3A) cp = U'A' + (cp - 0xFF21);
    if (cp >= 0xFF41 && cp <= 0xFF5A) cp = U'a' + (cp - 0xFF41);
  }
  for (std::size_t i = 0; i < cps->size(); ++i) {
    const char32_t cp = (*cps)[i];
    if (cp < 'A' || cp > 'Z') continue;
    if (i > 0 && ascii_letter((*cps)[i - 1])) continue;
    if (i + 1 < cps->size() && ascii_letter((*cps)[i + 1])) continue;
    const std::string key(1, static_cast<char>(cp));
    if (std::find(keys.begin(), keys.end(), key) != keys.end()) return key;
  }
  return {};
}

std::string format_mcq(const McqItem& item, bool with_answer) {
  std::string s = item.stem + "\n";
  for (const auto& [k, v] : item.options) s += k + ". " + v + "\n";
  s += kAnswerDirective;
  if (with_answer) s += " " + item.gold;
  return s;
}

Json McqOptions::to_json() const { return {{"shots", shots}, {"seed", seed}, {"max_tokens", max_tokens}}; }

Json McqRecord::to_json() const {
  Json j = {{"id", id}, {"exam", exam}, {"prompt", prompt}, {"response", response}, {"parsed", parsed},
            {"correct", correct}};
  if (!error.empty()) j["error"] = error;
  return j;
}

Json McqReport::summary() const {
  Json exams = Json::object();
  for (const auto& [exam, s] : per_exam) {
    exams[exam] = {{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy}};
  }
  return {{"accuracy", overall.accuracy},
          {"correct", overall.correct},
          {"total", overall.total},
          {"mean_of_exams", mean_of_exams},
          {"per_exam", exams},
          {"unparsed", unparsed},
          {"exemplars", exemplar_ids},
          {"config", config}};
}

McqReport run_mcq(const std::vector<McqItem>& items, GenerationClient& model, const McqOptions& opts,
                  const std::vector<McqItem>& exemplar_pool) {
  if (items.empty()) throw ValidationError("MCQ run with no items");
  if (opts.shots != 0 && opts.shots != 5) throw ConfigError("shots must be 0 or 5");
  McqReport report;
  report.config = opts.to_json();
  report.config["model"] = model.id();

  std::string preamble;
  if (opts.shots > 0) {
    std::set<std::string> ids, stems;
    for (const auto& it : items) {
      ids.insert(it.id);
      stems.insert(it.stem);
    }
    std::vector<const McqItem*> pool;
    for (const auto& ex : exemplar_pool) {
      if (!ids.count(ex.id) && !stems.count(ex.stem)) pool.push_back(&ex);
    }
    if (pool.size() < opts.shots) {
      throw ValidationError(std::to_string(opts.shots) + "-shot prompts need " + std::to_string(opts.shots) +
                            " exemplars disjoint from the eval items; the pool has " + std::to_string(pool.size()));
    }
    Rng rng(opts.seed);
    rng.shuffle(pool);
    for (std::size_t i = 0; i < opts.shots; ++i) {
      preamble += format_mcq(*pool[i], true) + "\n\n";
      report.exemplar_ids.push_back(pool[i]->id);
    }
  }

  for (const auto& item : items) {
    item.validate();
    McqRecord rec{item.id, item.exam, preamble + format_mcq(item, false), {}, {}, false, {}};
    std::vector<std::string> keys;
    for (const auto& [k, _] : item.options) keys.push_back(k);
    try {
      rec.response = model.generate({rec.prompt, opts.max_tokens});
      rec.parsed = parse_answer_letter(rec.response, keys);
      if (rec.parsed.empty()) rec.error = "no option letter in reply";
    } catch (const Error& e) {
      rec.error = e.what();
    }
    if (rec.parsed.empty()) ++report.unparsed;
    rec.correct = rec.parsed == item.gold;
    auto& exam = report.per_exam[item.exam];
    ++exam.total;
    ++report.overall.total;
    if (rec.correct) {
      ++exam.correct;
      ++report.overall.correct;
    }
    report.records.push_back(std::move(rec));
  }
  double sum = 0.0;
  for (auto& [_, s] : report.per_exam) {
    s.accuracy = percent(s.correct, s.total);
    sum += s.accuracy;
  }
  report.overall.accuracy = percent(report.overall.correct, report.overall.total);
  report.mean_of_exams = sum / static_cast<double>(report.per_exam.size());
  return report;
}

std::vector<FreeTextItem> load_freetext(const std::filesystem::path& path) {
  return load_lines<FreeTextItem>(path, [](const Json& j) {
    return FreeTextItem{id_of(j), j.at("question").get<std::string>(), j.at("reference").get<std::string>()};
  });
}

Json FreeTextReport::summary() const { return {{"metrics", metrics}, {"items", records.size()}}; }

FreeTextReport run_freetext(const std::vector<FreeTextItem>& items, GenerationClient& model, int max_tokens) {
  if (items.empty()) throw ValidationError("free-text run with no items");
  FreeTextReport report;
  std::vector<std::string> responses;
  const char* names[] = {"bleu_1", "bleu_2", "bleu_3", "bleu_4", "gleu", "rouge_1", "rouge_2", "rouge_l"};
  std::map<std::string, double> sums;
  for (const auto& item : items) {
    Json rec = {{"id", item.id}, {"question", item.question}};
    std::string response;
    try {
      response = model.generate({item.question, max_tokens});
    } catch (const Error& e) {
      rec["error"] = e.what();
    }
    rec["response"] = response;
    const std::vector<std::string> refs = {item.reference};
    const double values[] = {bleu_n(response, refs, 1),
                             bleu_n(response, refs, 2),
                             bleu_n(response, refs, 3),
                             bleu_n(response, refs, 4),
                             gleu(response, refs),
                             rouge(response, item.reference, RougeVariant::kRouge1),
                             rouge(response, item.reference, RougeVariant::kRouge2),
                             rouge(response, item.reference, RougeVariant::kRougeL)};
    for (std::size_t m = 0; m < std::size(names); ++m) {
      rec[names[m]] = values[m];
      sums[names[m]] += values[m];
    }
    responses.push_back(response);
    report.records.push_back(std::move(rec));
  }
  for (const auto& [k, v] : sums) report.metrics[k] = v / static_cast<double>(items.size());
  for (std::size_t n : {1, 2}) {
    try {
      report.metrics["distinct_" + std::to_string(n)] = distinct_n(responses, n);
    } catch (const ValidationError&) {
      report.metrics["distinct_" + std::to_string(n)] = 0.0;
    }
  }
  return report;
}

Json JudgeResult::to_json() const {
  Json j = {{"scored", scored()}, {"verdict", verdict}, {"raw", raw}};
  if (scores) {
    j["fluent"] = scores->fluent;
    j["logic"] = scores->logic;
    j["professional"] = scores->professional;
    j["informative"] = scores->informative;
  }
  if (!error.empty()) j["error"] = error;
  return j;
}

JudgeResult parse_judge_reply(const std::string& reply) {
  JudgeResult r;
  r.raw = reply;
  for (std::size_t open = reply.find('{'); open != std::string::npos; open = reply.find('{', open + 1)) {
    // Match braces outside string literals.
    int depth = 0;
    bool in_string = false, escaped = false;
    std::size_t close = std::string::npos;
    for (std::size_t i = open; i < reply.size(); ++i) {
      const char c = reply[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') in_string = true;
      if (c == '{') ++depth;
      if (c == '}' && --depth == 0) {
        close = i;
        break;
      }
    }
    if (close == std::string::npos) break;
    const Json j = Json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    bool ok = true;
    for (const char* key : {"fluent", "logic", "professional", "informative"}) ok = ok && j.contains(key) && j[key].is_number();
    if (!ok) continue;
    r.scores = JudgeScores{j["fluent"].get<double>(), j["logic"].get<double>(), j["professional"].get<double>(),
                           j["informative"].get<double>()};
    if (j.contains("verdict") && j["verdict"].is_string()) r.verdict = j["verdict"].get<std::string>();
    return r;
  }
  r.error = "no JSON block with all four scores";
  return r;
}

JudgeResult judge_score(const std::string& question, const std::string& answer, GenerationClient& judge,
                        const std::string& rubric) {
  const std::string prompt = rubric + "\n\nQuestion: " + question + "\nAnswer: " + answer;
  try {
    return parse_judge_reply(judge.generate({prompt, 256}));
  } catch (const Error& e) {
    JudgeResult r;
    r.error = e.what();
    return r;
  }
}

Json TournamentReport::summary() const {
  return {{"wins_a", wins_a}, {"wins_b", wins_b}, {"ties", ties}, {"unscored", unscored}, {"items", records.size()}};
}

TournamentReport run_tournament(const std::vector<PairwiseItem>& items, GenerationClient& judge,
                                const std::string& rubric) {
  TournamentReport report;
  for (const auto& item : items) {
    const std::string prompt =
        rubric + "\n\nQuestion: " + item.question + "\nAnswer A: " + item.answer_a + "\nAnswer B: " + item.answer_b;
    JudgeResult r;
    try {
      r = parse_judge_reply(judge.generate({prompt, 256}));
    } catch (const Error& e) {
      r.error = e.what();
    }
    std::string verdict = r.verdict;
    std::transform(verdict.begin(), verdict.end(), verdict.begin(),
                   [](unsigned char c) { return static_cast<char>(c >= 'a' && c <= 'z' ? c - 32 : c); });
    if (r.scored() && verdict == "A") {
      ++report.wins_a;
    } else if (r.scored() && verdict == "B") {
      ++report.wins_b;
    } else if (r.scored() && verdict == "TIE") {
      ++report.ties;
    } else {
      ++report.unscored;
      if (r.error.empty()) r.error = "verdict must be A, B or tie";
      r.scores.reset();
    }
    Json rec = r.to_json();
    rec["id"] = item.id;
    report.records.push_back(std::move(rec));
  }
  return report;
}

std::vector<PairwiseItem> load_pairwise(const std::filesystem::path& path) {
  return load_lines<PairwiseItem>(path, [](const Json& j) {
    return PairwiseItem{id_of(j), j.at("question").get<std::string>(), j.at("answer_a").get<std::string>(),
                        j.at("answer_b").get<std::string>()};
  });
}

}  // namespace topicrag
