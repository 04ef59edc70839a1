#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "topicrag/client.hpp"
#include "topicrag/io.hpp"

namespace topicrag {

struct McqItem {
  std::string id;
  std::string stem;
  std::vector<std::pair<std::string, std::string>> options;  // key, text; keys A-E
  std::string gold;
  std::string exam;  // "chef" or "dietetic"

  void validate() const;
  Json to_json() const;
  static McqItem from_json(const Json& j);
};

std::vector<McqItem> load_mcq(const std::filesystem::path& path);

// First option key standing alone in the reply (full-width letters are
// folded to ASCII; a key counts when no ASCII letter touches it). Empty when
// none is found.
std::string parse_answer_letter(const std::string& reply, const std::vector<std::string>& keys);

inline constexpr const char* kAnswerDirective = "Answer:";

// Stem, lettered options and the answer directive. With `gold` set, the key
// follows the directive (exemplar form).
std::string format_mcq(const McqItem& item, bool with_answer);

struct McqOptions {
  std::size_t shots = 0;  // 0 or 5
  std::uint64_t seed = 42;
  int max_tokens = 16;

  Json to_json() const;
};

struct McqRecord {
  std::string id;
  std::string exam;
  std::string prompt;
  std::string response;
  std::string parsed;
  bool correct = false;
  std::string error;

  Json to_json() const;
};

struct ExamScore {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;  // percent
};

struct McqReport {
  std::vector<McqRecord> records;
  std::map<std::string, ExamScore> per_exam;
  ExamScore overall;              // correct / total over all items
  double mean_of_exams = 0.0;     // unweighted mean of per-exam accuracies
  std::size_t unparsed = 0;
  std::vector<std::string> exemplar_ids;
  Json config;

  Json summary() const;
};

// Exemplars are the first `shots` items of the pool, minus ids and stems that
// also appear among the eval items, after a seeded shuffle; the same
// exemplars precede every item.
McqReport run_mcq(const std::vector<McqItem>& items, GenerationClient& model, const McqOptions& opts,
                  const std::vector<McqItem>& exemplar_pool = {});

struct FreeTextItem {
  std::string id;
  std::string question;
  std::string reference;
};

std::vector<FreeTextItem> load_freetext(const std::filesystem::path& path);

struct FreeTextReport {
  std::vector<Json> records;
  std::map<std::string, double> metrics;  // corpus means plus distinct-1/2

  Json summary() const;
};

FreeTextReport run_freetext(const std::vector<FreeTextItem>& items, GenerationClient& model, int max_tokens = 512);

struct JudgeScores {
  double fluent = 0.0;
  double logic = 0.0;
  double professional = 0.0;
  double informative = 0.0;
};

struct JudgeResult {
  std::optional<JudgeScores> scores;  // empty when the reply was unusable
  std::string verdict;
  std::string raw;
  std::string error;

  bool scored() const { return scores.has_value(); }
  Json to_json() const;
};

inline constexpr const char* kDefaultRubric =
    "Rate the answer to the food-domain question on four 1-10 scales: fluent (readability), logic "
    "(coherence of reasoning), professional (domain accuracy) and informative (useful content). "
    "Reply with a JSON object {\"fluent\": n, \"logic\": n, \"professional\": n, \"informative\": n, "
    "\"verdict\": \"...\"}.";

// Reads the first JSON object in the reply that carries all four numeric scores.
JudgeResult parse_judge_reply(const std::string& reply);

JudgeResult judge_score(const std::string& question, const std::string& answer, GenerationClient& judge,
                        const std::string& rubric = kDefaultRubric);

struct PairwiseItem {
  std::string id;
  std::string question;
  std::string answer_a;
  std::string answer_b;
};

inline constexpr const char* kDefaultPairwiseRubric =
    "Compare answers A and B to the food-domain question on fluency, logic, professionalism and "
    "informativeness. Reply with a JSON object {\"fluent\": n, \"logic\": n, \"professional\": n, "
    "\"informative\": n, \"verdict\": \"A\" | \"B\" | \"tie\"} scoring the better answer.";

struct TournamentReport {
  std::size_t wins_a = 0;
  std::size_t wins_b = 0;
  std::size_t ties = 0;
  std::size_t unscored = 0;
  std::vector<Json> records;

  Json summary() const;
};

// One judge call per item. Replies without scores or with a verdict other
// than A, B or tie are counted as unscored.
TournamentReport run_tournament(const std::vector<PairwiseItem>& items, GenerationClient& judge,
                                const std::string& rubric = kDefaultPairwiseRubric);

std::vector<PairwiseItem> load_pairwise(const std::filesystem::path& path);

}  // namespace topicrag
