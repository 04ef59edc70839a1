#include "topicrag/pipeline.hpp"

#include <fstream>
#include <memory>

#include "topicrag/client.hpp"
#include "topicrag/corpus.hpp"
#include "topicrag/error.hpp"
#include "topicrag/sample.hpp"

namespace topicrag {

namespace {

constexpr StageKind kAllStages[] = {StageKind::kFilter,  StageKind::kRelevance, StageKind::kGenerateQa,
                                    StageKind::kDedup,   StageKind::kIntents,   StageKind::kCluster,
                                    StageKind::kSelect};

struct State {
  bool passages = true;
  std::vector<RawRecord> records;
  std::vector<InstructionSample> samples;

  std::size_t size() const { return passages ? records.size() : samples.size(); }
};

std::string two_digits(std::size_t i) { return (i < 10 ? "0" : "") + std::to_string(i); }

std::filesystem::path checkpoint_path(const PipelineConfig& cfg, std::size_t i) {
  return cfg.output_dir / "checkpoints" / (two_digits(i + 1) + "-" + stage_name(cfg.stages[i].kind) + ".jsonl");
}

std::filesystem::path log_path(const PipelineConfig& cfg, std::size_t i) {
  return cfg.output_dir / "logs" / (two_digits(i + 1) + "-" + stage_name(cfg.stages[i].kind) + ".jsonl");
}

Json read_meta(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string first;
  if (!in || !std::getline(in, first)) return nullptr;
  const Json j = Json::parse(first, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("_meta")) return nullptr;
  return j["_meta"];
}

bool is_passage_record(const Json& j) { return j.is_object() && j.contains("text") && !j.contains("question"); }

State load_input(const PipelineConfig& cfg, std::vector<Rejection>& quarantine) {
  State st;
  const auto lines = read_jsonl(cfg.input);
  bool decided = false;
  for (const auto& line : lines) {
    if (!line.error.empty()) {
      quarantine.push_back({"line:" + std::to_string(line.line_no), "input", "unparseable", line.error, true});
      continue;
    }
    const bool passage = is_passage_record(line.value);
    if (!decided) {
      st.passages = passage;
      decided = true;
    } else if (passage != st.passages) {
      throw ValidationError(cfg.input.string() + ":" + std::to_string(line.line_no) +
                            ": mixes passage and question-answer records");
    }
    try {
      if (passage) {
        st.records.push_back(RawRecord::from_json(line.value));
      } else {
        st.samples.push_back(InstructionSample::from_json(line.value));
      }
    } catch (const ValidationError& e) {
      quarantine.push_back({"line:" + std::to_string(line.line_no), "input", "invalid_record", e.what(), true});
    }
  }
  if (!decided && !cfg.stages.empty()) st.passages = stage_reads_passages(cfg.stages.front().kind);
  return st;
}

void save_state(const std::filesystem::path& path, const State& st, const Json& meta) {
  std::vector<Json> rows;
  if (st.passages) {
    for (const auto& r : st.records) rows.push_back(r.to_json());
  } else {
    for (const auto& s : st.samples) rows.push_back(s.to_json(true));
  }
  write_jsonl(path, rows, meta);
}

State load_state(const std::filesystem::path& path, bool passages) {
  State st;
  st.passages = passages;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) {
      throw ValidationError("checkpoint " + path.string() + ":" + std::to_string(line.line_no) + ": " + line.error);
    }
    if (passages) {
      st.records.push_back(RawRecord::from_json(line.value));
    } else {
      st.samples.push_back(InstructionSample::from_json(line.value));
    }
  }
  return st;
}

std::string stage_prompt(const PipelineConfig& cfg, const Json& p, const char* fallback) {
  if (p.contains("prompt_file")) return read_file(cfg.resolve(p["prompt_file"].get<std::string>()));
  return p.value("prompt_template", std::string(fallback));
}

std::string client_spec(const PipelineConfig& cfg, const std::string& spec) {
  if (spec.rfind("scripted:", 0) == 0) return "scripted:" + cfg.resolve(spec.substr(9)).string();
  return spec;
}

std::unique_ptr<GenerationClient> stage_client(const PipelineConfig& cfg, const Json& p, StageKind kind) {
  if (!p.contains("client") || !p["client"].is_string()) {
    throw ConfigError(std::string("stage ") + stage_name(kind) + " needs a \"client\"");
  }
  try {
    return make_client(client_spec(cfg, p["client"].get<std::string>()));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("stage ") + stage_name(kind) + " client: " + e.what());
  }
}

}  // namespace

const char* stage_name(StageKind kind) {
  switch (kind) {
    case StageKind::kFilter: return "filter";
    case StageKind::kRelevance: return "relevance";
    case StageKind::kGenerateQa: return "generate_qa";
    case StageKind::kDedup: return "dedup";
    case StageKind::kIntents: return "intents";
    case StageKind::kCluster: return "cluster";
    case StageKind::kSelect: return "select";
  }
  return "?";
}

StageKind stage_from_name(const std::string& name) {
  for (auto k : kAllStages) {
    if (name == stage_name(k)) return k;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

bool stage_reads_passages(StageKind kind) {
  return kind == StageKind::kFilter || kind == StageKind::kRelevance || kind == StageKind::kGenerateQa;
}

std::filesystem::path PipelineConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

PipelineConfig PipelineConfig::from_json(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("pipeline config must be a JSON object");
  PipelineConfig c;
  c.document = doc;
  c.base_dir = base_dir;
  try {
    c.input = c.resolve(doc.at("input").get<std::string>());
    c.output_dir = c.resolve(doc.value("output_dir", std::string("curated")));
    c.seed = doc.value("seed", std::uint64_t{42});
    c.embedder = EmbedderSpec::from_json(doc.value("embedder", Json::object()));
    if (c.embedder.cache_dir != std::filesystem::path() && c.embedder.cache_dir.is_relative()) {
      c.embedder.cache_dir = base_dir / c.embedder.cache_dir;
    }
    if (doc.contains("max_quarantined") && !doc["max_quarantined"].is_null()) {
      c.max_quarantined = doc["max_quarantined"].get<std::size_t>();
    }
    for (const auto& s : doc.at("stages")) {
      StageConfig sc{StageKind::kFilter, Json::object()};
      if (s.is_string()) {
        sc.kind = stage_from_name(s.get<std::string>());
      } else {
        sc.kind = stage_from_name(s.at("name").get<std::string>());
        sc.params = s;
        sc.params.erase("name");
      }
      c.stages.push_back(std::move(sc));
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  if (c.stages.empty()) throw ConfigError("pipeline config lists no stages");

  bool has_passage_stage = false, has_sample_stage = false;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const StageKind k = c.stages[i].kind;
    if (i > 0 && static_cast<int>(k) <= static_cast<int>(c.stages[i - 1].kind)) {
      throw ConfigError(std::string("stage '") + stage_name(k) + "' cannot follow '" +
                        stage_name(c.stages[i - 1].kind) +
                        "'; order is filter, relevance, generate_qa, dedup, intents, cluster, select");
    }
    (stage_reads_passages(k) ? has_passage_stage : has_sample_stage) = true;
  }
  auto has = [&](StageKind k) {
    for (const auto& s : c.stages) {
      if (s.kind == k) return true;
    }
    return false;
  };
  if (has_passage_stage && has_sample_stage && !has(StageKind::kGenerateQa)) {
    throw ConfigError("passage stages and sample stages need generate_qa between them");
  }
  if (has(StageKind::kCluster) && !has(StageKind::kIntents)) throw ConfigError("cluster needs the intents stage");
  if (has(StageKind::kSelect) && !has(StageKind::kCluster)) throw ConfigError("select needs the cluster stage");
  for (const auto& s : c.stages) {
    const Json& p = s.params;
    if (s.kind == StageKind::kDedup && p.contains("tau") && !p["tau"].is_number()) throw ConfigError("dedup tau must be a number");
    if (s.kind == StageKind::kCluster && p.contains("k") && !p["k"].is_null() &&
        (!p["k"].is_number_integer() || p["k"].get<long long>() < 1)) {
      throw ConfigError("cluster k must be a positive integer");
    }
    if ((s.kind == StageKind::kRelevance || s.kind == StageKind::kGenerateQa) && !p.contains("client")) {
      throw ConfigError(std::string("stage ") + stage_name(s.kind) + " needs a \"client\"");
    }
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  Json doc = Json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw ConfigError("pipeline config " + path.string() + " is not valid JSON");
  return from_json(doc, path.parent_path());
}

void PipelineConfig::check_paths() const {
  if (!std::filesystem::is_regular_file(input)) throw ConfigError("input file " + input.string() + " does not exist");
  for (const auto& s : stages) {
    if (s.params.contains("client") && s.params["client"].is_string()) {
      const std::string spec = s.params["client"].get<std::string>();
      if (spec.rfind("scripted:", 0) == 0 && !std::filesystem::is_regular_file(resolve(spec.substr(9)))) {
        throw ConfigError("client script " + resolve(spec.substr(9)).string() + " does not exist");
      }
    }
    if (s.params.contains("prompt_file") && !std::filesystem::is_regular_file(resolve(s.params["prompt_file"]))) {
      throw ConfigError("prompt file " + resolve(s.params["prompt_file"]).string() + " does not exist");
    }
  }
}

Json StageSummary::to_json() const {
  return {{"stage", name}, {"input", input}, {"output", output}, {"rejected", rejected}, {"quarantined", quarantined}};
}

Json CurateResult::summary() const {
  Json stages_json = Json::array();
  for (const auto& s : stages) stages_json.push_back(s.to_json());
  Json j = {{"config_hash", config_hash}, {"dataset", dataset.generic_string()}, {"records", records},
            {"quarantined", quarantined}, {"escalated", escalated}, {"stages", stages_json}};
  if (resumed_from) j["resumed_from"] = *resumed_from;
  return j;
}

void write_config_snapshot(const std::filesystem::path& dir, const Json& config) {
  std::filesystem::create_directories(dir);
  write_file(dir / "config.snapshot.json", Json{{"config", config}, {"config_hash", config_hash(config)}}.dump(2) + "\n");
}

CurateResult cmd_curate(const PipelineConfig& cfg, const CurateOptions& opts) {
  cfg.check_paths();
  CurateResult result;
  result.config_hash = cfg.hash();
  std::filesystem::create_directories(cfg.output_dir / "checkpoints");
  std::filesystem::create_directories(cfg.output_dir / "logs");
  write_config_snapshot(cfg.output_dir, cfg.document);

  // Where to start: 0, after the last matching checkpoint, or at a named stage.
  std::size_t start = 0;
  if (opts.from_stage) {
    const StageKind k = stage_from_name(*opts.from_stage);
    bool found = false;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      if (cfg.stages[i].kind == k) {
        start = i;
        found = true;
      }
    }
    if (!found) throw ConfigError("stage '" + *opts.from_stage + "' is not in this pipeline");
    if (start > 0) {
      const Json meta = read_meta(checkpoint_path(cfg, start - 1));
      if (meta.is_null() || meta.value("config_hash", "") != result.config_hash) {
        throw ValidationError("no checkpoint from this config for stage '" +
                              std::string(stage_name(cfg.stages[start - 1].kind)) + "'");
      }
    }
  } else if (opts.resume) {
    while (start < cfg.stages.size()) {
      const Json meta = read_meta(checkpoint_path(cfg, start));
      if (meta.is_null() || meta.value("config_hash", "") != result.config_hash) break;
      ++start;
    }
  }

  std::vector<Rejection> input_quarantine;
  State st;
  if (start == 0) {
    st = load_input(cfg, input_quarantine);
    if (st.passages != stage_reads_passages(cfg.stages.front().kind)) {
      throw ConfigError(std::string("input holds ") + (st.passages ? "passages" : "question-answer samples") +
                        " but the first stage '" + stage_name(cfg.stages.front().kind) + "' reads " +
                        (st.passages ? "samples" : "passages"));
    }
    std::vector<Json> rows;
    for (const auto& r : input_quarantine) rows.push_back(r.to_json());
    write_jsonl(cfg.output_dir / "logs" / "00-input.jsonl", rows, {{"config_hash", result.config_hash}, {"stage", "input"}});
    result.quarantined += input_quarantine.size();
  } else {
    const StageKind prev = cfg.stages[start - 1].kind;
    st = load_state(checkpoint_path(cfg, start - 1), stage_reads_passages(prev) && prev != StageKind::kGenerateQa);
    result.resumed_from = stage_name(prev);
  }

  std::unique_ptr<Embedder> embedder;
  auto ensure_embeddings = [&]() {
    if (!embedder) embedder = make_embedder(cfg.embedder);
    embed_samples(st.samples, *embedder);
  };
  std::optional<ClusterAssignment> clusters;
  std::optional<IntentDistribution> intents;

  for (std::size_t i = start; i < cfg.stages.size(); ++i) {
    const StageConfig& stage = cfg.stages[i];
    const Json& p = stage.params;
    StageSummary sum{stage_name(stage.kind), st.size(), 0, 0, 0};
    std::vector<Json> log;
    switch (stage.kind) {
      case StageKind::kFilter: {
        FilterResult fr = rule_filter(st.records, RuleFilterConfig::from_json(p));
        for (const auto& r : fr.rejected) {
          log.push_back(r.to_json());
          sum.quarantined += r.quarantined ? 1 : 0;
        }
        sum.rejected = fr.rejected.size();
        st.records = std::move(fr.kept);
        break;
      }
      case StageKind::kRelevance: {
        auto client = stage_client(cfg, p, stage.kind);
        const std::string tmpl = stage_prompt(cfg, p, kDefaultRelevancePrompt);
        std::vector<RawRecord> kept;
        for (auto& r : st.records) {
          const RelevanceVerdict v = llm_relevance_filter(r, *client, tmpl);
          if (v.decision == Relevance::kKeep) {
            kept.push_back(std::move(r));
            continue;
          }
          const bool q = v.decision == Relevance::kQuarantine;
          Rejection rej{r.id, "relevance", q ? "unparseable_reply" : "irrelevant", q ? v.error : "", q};
          Json entry = rej.to_json();
          entry["response"] = v.raw_response;
          log.push_back(std::move(entry));
          ++sum.rejected;
          sum.quarantined += q ? 1 : 0;
        }
        st.records = std::move(kept);
        break;
      }
      case StageKind::kGenerateQa: {
        auto client = stage_client(cfg, p, stage.kind);
        QaConfig qa;
        qa.prompt_template = stage_prompt(cfg, p, kDefaultQaPrompt);
        qa.max_sentences = p.value("max_sentences", qa.max_sentences);
        qa.max_questions = p.value("max_questions", qa.max_questions);
        for (const auto& r : st.records) {
          auto generated = generate_qa(r, *client, qa);
          if (generated.empty()) {
            log.push_back(Rejection{r.id, "generate_qa", "no_questions", "", false}.to_json());
            ++sum.rejected;
          }
          for (auto& s : generated) st.samples.push_back(std::move(s));
        }
        st.records.clear();
        st.passages = false;
        break;
      }
      case StageKind::kDedup: {
        ensure_embeddings();
        DedupResult dr = threshold_dedup(st.samples, p.value("tau", 0.9));
        for (const auto& r : dr.removed) {
          log.push_back({{"id", r.removed_id}, {"stage", "dedup"}, {"cause", "near_duplicate"},
                         {"kept", r.kept_id}, {"cosine", r.cosine}});
        }
        sum.rejected = dr.removed.size();
        st.samples = std::move(dr.kept);
        break;
      }
      case StageKind::kIntents: {
        std::unique_ptr<IntentClassifier> classifier;
        std::unique_ptr<GenerationClient> client;
        const std::string kind = p.value("classifier", std::string("keywords"));
        if (kind == "keywords") {
          std::vector<KeywordIntentClassifier::Rule> rules = KeywordIntentClassifier::default_rules();
          if (p.contains("rules")) rules = p["rules"].get<std::vector<KeywordIntentClassifier::Rule>>();
          classifier = std::make_unique<KeywordIntentClassifier>(std::move(rules));
        } else {
          client = make_client(client_spec(cfg, kind));
          classifier = std::make_unique<ClientIntentClassifier>(*client, p.value("labels", std::vector<std::string>{}));
        }
        st.samples = extract_intents(st.samples, *classifier);
        if (!st.samples.empty()) {
          intents = intent_distribution(st.samples);
          write_file(cfg.output_dir / "intent_distribution.json",
                     Json{{"config_hash", result.config_hash}, {"distribution", intents->to_json()}}.dump(2) + "\n");
        }
        break;
      }
      case StageKind::kCluster: {
        if (st.samples.empty()) break;
        ensure_embeddings();
        if (!intents) intents = intent_distribution(st.samples);
        AhcOptions ao;
        if (p.contains("k") && !p["k"].is_null()) ao.k = p["k"].get<std::size_t>();
        if (p.contains("max_height") && !p["max_height"].is_null()) ao.max_height = p["max_height"].get<double>();
        clusters = weighted_ahc(st.samples, *intents, ao);
        // Members are tagged with their cluster so the select stage can resume from this checkpoint.
        for (std::size_t s = 0; s < st.samples.size(); ++s) {
          log.push_back({{"id", st.samples[s].id}, {"stage", "cluster"}, {"cluster", clusters->cluster_of[s]},
                         {"center", st.samples[clusters->centers[clusters->cluster_of[s]]].id}});
        }
        write_file(cfg.output_dir / "clusters.json",
                   Json{{"config_hash", result.config_hash}, {"assignment", clusters->to_json(st.samples)}}.dump(2) + "\n");
        break;
      }
      case StageKind::kSelect: {
        if (st.samples.empty()) break;
        ensure_embeddings();
        if (!clusters) {
          // Resumed: rebuild the assignment from the cluster stage log.
          const Json assignment = Json::parse(read_file(cfg.output_dir / "clusters.json")).at("assignment");
          std::map<std::string, std::size_t> pos;
          for (std::size_t s = 0; s < st.samples.size(); ++s) pos[st.samples[s].id] = s;
          ClusterAssignment ca;
          ca.cluster_of.assign(st.samples.size(), 0);
          for (const auto& c : assignment.at("clusters")) {
            std::vector<std::size_t> members;
            for (const auto& id : c.at("members")) members.push_back(pos.at(id.get<std::string>()));
            for (auto m : members) ca.cluster_of[m] = ca.members.size();
            ca.members.push_back(std::move(members));
            ca.centers.push_back(pos.at(c.at("center").get<std::string>()));
          }
          clusters = std::move(ca);
        }
        SelectionResult sr = select_representatives(st.samples, *clusters, p.value("threshold", 0.9));
        for (const auto& e : sr.log) {
          Json j = e.to_json();
          j["stage"] = "select";
          log.push_back(std::move(j));
        }
        sum.rejected = st.samples.size() - sr.kept.size();
        st.samples = std::move(sr.kept);
        break;
      }
    }
    sum.output = st.size();
    result.quarantined += sum.quarantined;
    const Json meta = {{"config_hash", result.config_hash}, {"stage", sum.name}, {"index", i + 1}};
    write_jsonl(log_path(cfg, i), log, meta);
    save_state(checkpoint_path(cfg, i), st, meta);
    result.stages.push_back(std::move(sum));
  }

  result.dataset = cfg.output_dir / "dataset.jsonl";
  std::vector<Json> rows;
  if (st.passages) {
    for (const auto& r : st.records) rows.push_back(r.to_json());
  } else {
    for (const auto& s : st.samples) rows.push_back(s.to_json(false));
  }
  result.records = rows.size();
  write_jsonl(result.dataset, rows, {{"config_hash", result.config_hash}, {"artifact", "dataset"}});
  result.escalated = cfg.max_quarantined && result.quarantined > *cfg.max_quarantined;
  return result;
}

}  // namespace topicrag
