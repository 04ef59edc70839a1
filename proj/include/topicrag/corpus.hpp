#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "topicrag/client.hpp"
#include "topicrag/embeddings.hpp"
#include "topicrag/io.hpp"
#include "topicrag/sample.hpp"

namespace topicrag {

// A pre-exported text passage before QA generation.
struct RawRecord {
  std::string id;
  std::string text;
  std::string source;

  Json to_json() const;
  static RawRecord from_json(const Json& j);
};

// A record removed by a stage, with the reason and enough context to review it.
struct Rejection {
  std::string id;
  std::string stage;
  std::string cause;
  std::string detail;
  bool quarantined = false;

  Json to_json() const;
};

struct RuleFilterConfig {
  std::size_t min_chars = 10;           // code points after whitespace normalization
  double max_emoticon_ratio = 0.2;      // emoji / non-space code points
  double max_filler_ratio = 0.3;        // code points inside filler words / non-space code points
  std::vector<std::string> filler_words = {"哈哈", "呵呵", "嘿嘿", "嗯嗯", "啊啊", "哦哦", "呜呜", "haha", "lol", "hmm"};

  Json to_json() const;
  static RuleFilterConfig from_json(const Json& j);
};

struct FilterResult {
  std::vector<RawRecord> kept;
  std::vector<Rejection> rejected;
  std::map<std::string, std::size_t> report;  // rule -> rejected count
};

// Whitespace is normalized on kept records. Rules run in order: invalid
// UTF-8 (quarantined), emoticon density, filler density, minimum length.
FilterResult rule_filter(const std::vector<RawRecord>& records, const RuleFilterConfig& cfg = {});

enum class Relevance { kKeep, kDrop, kQuarantine };

struct RelevanceVerdict {
  Relevance decision = Relevance::kQuarantine;
  std::string raw_response;
  std::string error;
};

inline constexpr const char* kDefaultRelevancePrompt =
    "You are screening text for a food-domain corpus. Food-related topics include dietary science, "
    "flavor, food safety, recipes and healthy eating. Return 1 for relevant text data and 0 for "
    "irrelevant text data. Reply with the single digit only.\n\nText: {text}";

// Sends the prompt with {text} substituted and accepts exactly "0" or "1"
// (surrounding whitespace ignored). Anything else, or a client failure after
// its own retries, quarantines the record.
RelevanceVerdict llm_relevance_filter(const RawRecord& record, GenerationClient& client,
                                      const std::string& prompt_template = kDefaultRelevancePrompt);

inline constexpr const char* kDefaultQaPrompt =
    "Read the food-related passage below and write questions that it answers, one per line.\n\n"
    "Passage: {text}";

struct AnswerWindow {
  std::size_t first = 0;  // sentence index, inclusive
  std::size_t last = 0;   // inclusive
  std::size_t overlap = 0;
};

// Count of distinct non-punctuation question tokens that occur in `text`.
std::size_t token_overlap(const std::string& question, const std::string& text);

// The contiguous window of at most `max_sentences` sentences with the largest
// token overlap; ties go to the shorter window, then the earlier start.
AnswerWindow best_answer_window(const std::string& question, const std::vector<std::string>& sentences,
                                std::size_t max_sentences = 3);

// Question lines parsed from a generator reply: blank lines dropped, list
// markers ("1.", "2)", "-", "Q:", "问：") stripped.
std::vector<std::string> parse_questions(const std::string& reply);

struct QaConfig {
  std::string prompt_template = kDefaultQaPrompt;
  std::size_t max_sentences = 3;
  std::size_t max_questions = 8;
};

// Sample ids are "<passage id>-q<n>". Returns an empty list when the reply has
// no questions.
std::vector<InstructionSample> generate_qa(const RawRecord& passage, GenerationClient& client,
                                           const QaConfig& cfg = {});

struct DedupRemoval {
  std::string removed_id;
  std::string kept_id;
  double cosine = 0.0;
};

struct DedupResult {
  std::vector<InstructionSample> kept;  // input order
  std::vector<DedupRemoval> removed;    // in removal order
};

// Pairs are visited greedily in ascending id order; for cosine > tau the
// shorter sample (question + answer code points) is removed, the later id on
// equal length. No surviving pair exceeds tau, so a second run is a no-op.
DedupResult threshold_dedup(const std::vector<InstructionSample>& samples, double tau = 0.9);

class IntentClassifier {
 public:
  virtual ~IntentClassifier() = default;
  virtual std::string classify(const InstructionSample& sample) = 0;
  virtual std::string id() const = 0;
};

inline constexpr const char* kOtherIntent = "other";

// First rule whose keyword occurs in the (ASCII-lowercased) question wins.
class KeywordIntentClassifier : public IntentClassifier {
 public:
  using Rule = std::pair<std::string, std::string>;  // keyword, intent
  explicit KeywordIntentClassifier(std::vector<Rule> rules = default_rules());
  std::string classify(const InstructionSample& sample) override;
  std::string id() const override { return "keyword-rules"; }
  static std::vector<Rule> default_rules();

 private:
  std::vector<Rule> rules_;
};

// Asks a generation client for one label out of `labels`; anything else maps to "other".
class ClientIntentClassifier : public IntentClassifier {
 public:
  ClientIntentClassifier(GenerationClient& client, std::vector<std::string> labels);
  std::string classify(const InstructionSample& sample) override;
  std::string id() const override { return "client:" + client_.id(); }

 private:
  GenerationClient& client_;
  std::vector<std::string> labels_;
};

std::vector<InstructionSample> extract_intents(const std::vector<InstructionSample>& samples,
                                               IntentClassifier& classifier);

struct IntentDistribution {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, double> weights;
  std::size_t total = 0;

  double weight(const std::string& intent) const;
  Json to_json() const;
};

IntentDistribution intent_distribution(const std::vector<InstructionSample>& samples);

struct AhcOptions {
  std::optional<std::size_t> k;         // target cluster count
  std::optional<double> max_height;     // stop before merges above this height
};

struct Merge {
  std::size_t a = 0;  // smallest member index of each merged cluster, a < b
  std::size_t b = 0;
  double height = 0.0;
  std::size_t size = 0;  // members after the merge
};

struct ClusterAssignment {
  std::vector<std::size_t> cluster_of;            // per sample
  std::vector<std::vector<std::size_t>> members;  // ascending; clusters ordered by smallest member
  std::vector<std::size_t> centers;               // sample index per cluster
  std::vector<Merge> merges;

  Json to_json(const std::vector<InstructionSample>& samples) const;
};

std::size_t default_cluster_count(std::size_t n);

// Intent-weighted dissimilarity (1 - cos(a, b)) * 2 / (w_a + w_b).
double weighted_dissimilarity(const InstructionSample& a, const InstructionSample& b, const IntentDistribution& dist);

// Average-linkage agglomerative clustering on the weighted dissimilarity.
// Among equal heights the pair with the smallest (a, b) merges first. Without
// k or max_height, k = default_cluster_count(n).
ClusterAssignment weighted_ahc(const std::vector<InstructionSample>& samples, const IntentDistribution& dist,
                               const AhcOptions& opts = {});

// Member minimizing the mean weighted dissimilarity to its cluster; lowest index on ties.
std::size_t cluster_center(const std::vector<InstructionSample>& samples, const std::vector<std::size_t>& members,
                           const IntentDistribution& dist);

struct ScreeningEntry {
  std::string id;
  std::size_t cluster = 0;
  std::string cause;  // "representative", "cluster_member", "near_other_center"
  std::optional<std::size_t> other_cluster;
  double cosine = 0.0;

  Json to_json() const;
};

struct SelectionResult {
  std::vector<InstructionSample> kept;  // cluster order
  std::vector<ScreeningEntry> log;
  std::size_t representatives_dropped = 0;
};

// Keeps each cluster's center, then walks clusters in order and drops a center
// whose cosine to an earlier kept center exceeds `threshold`.
SelectionResult select_representatives(const std::vector<InstructionSample>& samples,
                                       const ClusterAssignment& assignment, double threshold = 0.9);

struct LabeledPair {
  std::string a;
  std::string b;
  int label = 0;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct MinitestReport {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t total = 0;

  Json to_json() const;
};

// Accuracy, precision, recall and F1 from counts. Zero denominators give 0,
// except F1 = 1 when there are no positives and no false positives.
MinitestReport score_confusion(const ConfusionCounts& c);

// Predicts "similar" when cosine > tau.
MinitestReport eval_similarity_minitest(const std::vector<LabeledPair>& pairs, Embedder& embedder, double tau);

std::vector<LabeledPair> load_pairs(const std::filesystem::path& path);

// Fills missing embeddings in place.
void embed_samples(std::vector<InstructionSample>& samples, Embedder& embedder);

}  // namespace topicrag
