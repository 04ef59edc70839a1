#include <gtest/gtest.h>

#include <map>
#include <set>

#include "support/helpers.hpp"
#include "topicrag/client.hpp"
#include "topicrag/error.hpp"
#include "topicrag/eval.hpp"
#include "topicrag/io.hpp"

using namespace topicrag;

namespace {

const std::filesystem::path kFixtures = TOPICRAG_FIXTURES;

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

// The item under test is the last block of the prompt; its first line is the stem.
std::string last_stem(const std::string& prompt) {
  const auto p = prompt.rfind("\n\n");
  const std::string block = p == std::string::npos ? prompt : prompt.substr(p + 2);
  return block.substr(0, block.find('\n'));
}

}  // namespace

TEST(Mcq, LoadsBothOptionLayouts) {
  const auto items = load_mcq(kFixtures / "mcq_4.jsonl");
  ASSERT_EQ(items.size(), 4u);
  EXPECT_EQ(items[0].gold, "A");
  EXPECT_EQ(items[3].gold, "C");
  EXPECT_EQ(items[3].options.size(), 4u);
  EXPECT_EQ(items[3].options[2].second, "Fat");
  EXPECT_EQ(McqItem::from_json(items[1].to_json()).to_json(), items[1].to_json());
}

TEST(Mcq, ValidationRejectsBadItems) {
  McqItem m{"x", "stem", {{"A", "a"}, {"B", "b"}}, "C", "chef"};
  EXPECT_THROW(m.validate(), ValidationError);
  m.gold = "A";
  m.options = {{"A", "a"}};
  EXPECT_THROW(m.validate(), ValidationError);
  m.options = {{"A", "a"}, {"B", "b"}};
  EXPECT_NO_THROW(m.validate());
}

TEST(Mcq, ParseAnswerLetter) {
  const std::vector<std::string> keys = {"A", "B", "C", "D"};
  EXPECT_EQ(parse_answer_letter("B", keys), "B");
  EXPECT_EQ(parse_answer_letter("The answer is (C).", keys), "C");
  EXPECT_EQ(parse_answer_letter("答案：Ｄ", keys), "D");
  EXPECT_EQ(parse_answer_letter("Because of this, B", keys), "B");
  EXPECT_EQ(parse_answer_letter("no letter here", keys), "");
  EXPECT_EQ(parse_answer_letter("E", keys), "");
  EXPECT_EQ(parse_answer_letter("", keys), "");
}

TEST(Mcq, FormatHasDirective) {
  const McqItem m{"x", "Pick one", {{"A", "one"}, {"B", "two"}}, "B", "chef"};
  EXPECT_EQ(format_mcq(m, false), "Pick one\nA. one\nB. two\nAnswer:");
  EXPECT_EQ(format_mcq(m, true), "Pick one\nA. one\nB. two\nAnswer: B");
}

TEST(Mcq, OracleScoresFullMarks) {
  const auto items = load_mcq(kFixtures / "mcq_4.jsonl");
  std::map<std::string, std::string> gold;
  for (const auto& it : items) gold[it.stem] = it.gold;
  FunctionClient oracle([&](const GenerationRequest& r) { return "Answer: " + gold.at(last_stem(r.prompt)); });
  const McqReport rep = run_mcq(items, oracle, {});
  EXPECT_EQ(rep.overall.correct, 4u);
  EXPECT_DOUBLE_EQ(rep.overall.accuracy, 100.0);
  EXPECT_EQ(rep.unparsed, 0u);
}

TEST(Mcq, ConstantAnswerMatchesBaseRate) {
  const auto items = load_mcq(kFixtures / "mcq_4.jsonl");
  const auto model = make_client("constant:A");
  const McqReport rep = run_mcq(items, *model, {});
  EXPECT_EQ(rep.overall.correct, 2u);
  EXPECT_DOUBLE_EQ(rep.overall.accuracy, 50.0);
  EXPECT_DOUBLE_EQ(rep.per_exam.at("chef").accuracy, 50.0);
  EXPECT_DOUBLE_EQ(rep.per_exam.at("dietetic").accuracy, 50.0);
  EXPECT_DOUBLE_EQ(rep.mean_of_exams, 50.0);
  EXPECT_EQ(rep.summary()["config"]["model"], model->id());
}

TEST(Mcq, UnparsedRepliesCountAsWrong) {
  const auto items = load_mcq(kFixtures / "mcq_4.jsonl");
  FunctionClient vague([](const GenerationRequest&) { return std::string("hard to say"); });
  const McqReport rep = run_mcq(items, vague, {});
  EXPECT_EQ(rep.unparsed, 4u);
  EXPECT_EQ(rep.overall.correct, 0u);
  FunctionClient failing([](const GenerationRequest&) -> std::string { throw TransportError("down"); });
  const McqReport down = run_mcq(items, failing, {});
  EXPECT_EQ(down.unparsed, 4u);
  EXPECT_FALSE(down.records[0].error.empty());
}

TEST(Mcq, FiveShotUsesDisjointExemplars) {
  const auto items = load_mcq(kFixtures / "mcq_4.jsonl");
  const auto pool = load_mcq(kFixtures / "mcq_pool.jsonl");
  std::vector<std::string> prompts;
  FunctionClient model([&](const GenerationRequest& r) {
    prompts.push_back(r.prompt);
    return std::string("A");
  });
  McqOptions opts;
  opts.shots = 5;
  const McqReport rep = run_mcq(items, model, opts, pool);
  ASSERT_EQ(rep.exemplar_ids.size(), 5u);
  std::set<std::string> eval_ids, eval_stems;
  for (const auto& it : items) {
    eval_ids.insert(it.id);
    eval_stems.insert(it.stem);
  }
  for (const auto& id : rep.exemplar_ids) {
    EXPECT_FALSE(eval_ids.count(id)) << id;
    EXPECT_NE(id, "pool-09");  // shares a stem with an eval item
  }
  ASSERT_EQ(prompts.size(), 4u);
  const std::string preamble = prompts[0].substr(0, prompts[0].rfind("\n\n") + 2);
  for (const auto& p : prompts) {
    EXPECT_EQ(count_of(p, "Answer: "), 5u);
    EXPECT_EQ(count_of(p, "Answer:"), 6u);
    EXPECT_EQ(p.substr(0, preamble.size()), preamble);
    for (const auto& stem : eval_stems) EXPECT_LE(count_of(p, stem), 1u);
  }
  // Same seed, same exemplars.
  EXPECT_EQ(run_mcq(items, model, opts, pool).exemplar_ids, rep.exemplar_ids);
}

TEST(Mcq, ShotConfigurationErrors) {
  const auto items = load_mcq(kFixtures / "mcq_4.jsonl");
  const auto model = make_client("constant:A");
  McqOptions opts;
  opts.shots = 3;
  EXPECT_THROW(run_mcq(items, *model, opts), ConfigError);
  opts.shots = 5;
  EXPECT_THROW(run_mcq(items, *model, opts, items), ValidationError);
  EXPECT_THROW(run_mcq({}, *model, {}), ValidationError);
}

TEST(Judge, ParsesScores) {
  const JudgeResult r = parse_judge_reply(
      R"(Here you go: {"fluent": 8, "logic": 7.5, "professional": 9, "informative": 6, "verdict": "good"} done)");
  ASSERT_TRUE(r.scored());
  EXPECT_DOUBLE_EQ(r.scores->fluent, 8.0);
  EXPECT_DOUBLE_EQ(r.scores->logic, 7.5);
  EXPECT_DOUBLE_EQ(r.scores->professional, 9.0);
  EXPECT_DOUBLE_EQ(r.scores->informative, 6.0);
  EXPECT_EQ(r.verdict, "good");
}

TEST(Judge, MalformedRepliesAreUnscored) {
  for (const std::string bad : {"", "no json", R"({"fluent": 8})", R"({"fluent": "x", "logic": 1, "professional": 1,
                                "informative": 1})", "{broken"}) {
    const JudgeResult r = parse_judge_reply(bad);
    EXPECT_FALSE(r.scored()) << bad;
    EXPECT_FALSE(r.error.empty()) << bad;
    EXPECT_EQ(r.raw, bad);
  }
}

TEST(Judge, PromptCarriesQuestionAndAnswer) {
  std::string seen;
  FunctionClient judge([&](const GenerationRequest& r) {
    seen = r.prompt;
    return std::string(R"({"fluent": 1, "logic": 2, "professional": 3, "informative": 4})");
  });
  const JudgeResult r = judge_score("How to cook rice?", "Rinse and simmer.", judge);
  EXPECT_TRUE(r.scored());
  EXPECT_NE(seen.find(kDefaultRubric), std::string::npos);
  EXPECT_NE(seen.find("Question: How to cook rice?"), std::string::npos);
  EXPECT_NE(seen.find("Answer: Rinse and simmer."), std::string::npos);
}

TEST(Tournament, ScriptedTenItems) {
  const auto items = load_pairwise(kFixtures / "pairwise_10.jsonl");
  ASSERT_EQ(items.size(), 10u);
  const auto judge = make_client("scripted:" + (kFixtures / "pairwise_judge_replies.json").string());
  const TournamentReport rep = run_tournament(items, *judge);
  // Verdicts: A A B tie A B A (garbage) A B.
  EXPECT_EQ(rep.wins_a, 5u);
  EXPECT_EQ(rep.wins_b, 3u);
  EXPECT_EQ(rep.ties, 1u);
  EXPECT_EQ(rep.unscored, 1u);
  EXPECT_EQ(rep.records.size(), 10u);
  EXPECT_EQ(rep.summary()["items"], 10);
}

TEST(Tournament, UnknownVerdictIsUnscored) {
  const std::vector<PairwiseItem> items = {{"p", "q", "a", "b"}};
  ScriptedClient judge({R"({"fluent": 1, "logic": 1, "professional": 1, "informative": 1, "verdict": "C"})"});
  const TournamentReport rep = run_tournament(items, judge);
  EXPECT_EQ(rep.unscored, 1u);
  EXPECT_EQ(rep.wins_a + rep.wins_b + rep.ties, 0u);
}

TEST(FreeText, EchoAndReferenceModels) {
  const auto items = load_freetext(kFixtures / "freetext_3.jsonl");
  ASSERT_EQ(items.size(), 3u);
  std::map<std::string, std::string> refs;
  for (const auto& it : items) refs[it.question] = it.reference;
  FunctionClient perfect([&](const GenerationRequest& r) { return refs.at(r.prompt); });
  const FreeTextReport rep = run_freetext(items, perfect);
  for (const char* m : {"bleu_1", "bleu_4", "gleu", "rouge_1", "rouge_2", "rouge_l"}) {
    EXPECT_NEAR(rep.metrics.at(m), 1.0, 1e-12) << m;
  }
  EXPECT_TRUE(rep.metrics.count("distinct_1"));
  EXPECT_TRUE(rep.metrics.count("distinct_2"));
  FunctionClient off([](const GenerationRequest&) { return std::string("zzz qqq"); });
  EXPECT_NEAR(run_freetext(items, off).metrics.at("rouge_l"), 0.0, 1e-12);
}
