// topicrag: curate, train, index, ask, eval and minitest from one binary.
// Summaries go to stdout as JSON; progress and errors go to stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "topicrag/client.hpp"
#include "topicrag/corpus.hpp"
#include "topicrag/embeddings.hpp"
#include "topicrag/error.hpp"
#include "topicrag/eval.hpp"
#include "topicrag/htrag.hpp"
#include "topicrag/io.hpp"
#include "topicrag/pipeline.hpp"
#include "topicrag/sample.hpp"
#include "topicrag/topic_graph.hpp"
#include "topicrag/ts3m.hpp"

namespace fs = std::filesystem;
using namespace topicrag;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfig = 2,
  kInvalidData = 3,
  kIo = 4,
  kRemote = 5,
  kNumeric = 6,
  kQuarantine = 7,
};

Json load_json_file(const std::string& path) {
  Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + " is not valid JSON");
  return j;
}

TopicGraph load_taxonomy(const std::string& path) { return path.empty() ? default_taxonomy() : TopicGraph::load(path); }

EmbedderSpec load_embedder_spec(const std::string& path) {
  return path.empty() ? EmbedderSpec{} : EmbedderSpec::from_json(load_json_file(path));
}

void print(const Json& j) { std::cout << j.dump(2, ' ', false, Json::error_handler_t::replace) << "\n"; }

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

struct CurateArgs {
  std::string config;
  bool resume = false;
  std::string from_stage;
};

int run_curate(const CurateArgs& a) {
  const PipelineConfig cfg = PipelineConfig::load(a.config);
  CurateOptions opts;
  opts.resume = a.resume;
  if (!a.from_stage.empty()) opts.from_stage = a.from_stage;
  std::cerr << "curate: " << cfg.stages.size() << " stages, config " << cfg.hash() << "\n";
  const CurateResult r = cmd_curate(cfg, opts);
  print(r.summary());
  if (r.escalated) {
    std::cerr << "curate: " << r.quarantined << " quarantined records exceed the limit of " << *cfg.max_quarantined
              << "\n";
    return kQuarantine;
  }
  return kOk;
}

struct TrainArgs {
  std::string data, taxonomy, config, out, log;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr, dropout, stop_at;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  const TopicGraph graph = load_taxonomy(a.taxonomy);
  Json doc = a.config.empty() ? Json::object() : load_json_file(a.config);
  Ts3mDims dims = Ts3mDims::from_json(doc.value("dims", Json::object()));
  if (!doc.value("dims", Json::object()).contains("topics")) dims.topics = graph.label_count();
  TrainConfig tc = TrainConfig::from_json(doc.value("train", Json::object()));
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.lr = *a.lr;
  if (a.dropout) tc.dropout = *a.dropout;
  if (a.seed) tc.seed = *a.seed;
  tc.validate();

  const auto samples = load_samples(a.data);
  Json effective = {{"command", "train"}, {"data", a.data}, {"taxonomy", a.taxonomy.empty() ? "builtin" : a.taxonomy},
                    {"dims", dims.to_json()}, {"train", tc.to_json()}};
  if (a.stop_at) effective["stop_at_accuracy"] = *a.stop_at;
  const std::string hash = config_hash(effective);
  const fs::path out(a.out);
  write_config_snapshot(parent_or_cwd(out), effective);

  TokenEncoder encoder(dims.d_model, std::min(dims.max_tokens, tc.max_sequence_tokens));
  EpochCallback cb = [&](std::size_t epoch, const Ts3mModel& model) {
    if (!a.stop_at) return false;
    const double acc = topic_accuracy(model, samples, encoder);
    std::cerr << "train: epoch " << epoch + 1 << " accuracy " << acc << "\n";
    return acc >= *a.stop_at;
  };
  std::cerr << "train: " << samples.size() << " samples, " << tc.epochs << " epochs, config " << hash << "\n";
  const TrainResult r = train_ts3m(samples, graph, dims, tc, cb);
  r.model.save(out, hash);
  const fs::path log_file = a.log.empty() ? parent_or_cwd(out) / "train_log.jsonl" : fs::path(a.log);
  std::vector<Json> rows;
  for (const auto& rec : r.log) rows.push_back(rec.to_json());
  write_jsonl(log_file, rows, {{"config_hash", hash}, {"artifact", "train_log"}});
  print({{"checkpoint", out.generic_string()},
         {"log", log_file.generic_string()},
         {"config_hash", hash},
         {"epochs_run", r.epochs_run},
         {"steps", r.log.size()},
         {"train_accuracy", r.train_accuracy},
         {"final_loss", r.log.empty() ? 0.0 : r.log.back().l_total}});
  return kOk;
}

struct IndexArgs {
  std::string docs, taxonomy, embedder, out;
};

int run_index(const IndexArgs& a) {
  const TopicGraph graph = load_taxonomy(a.taxonomy);
  const EmbedderSpec spec = load_embedder_spec(a.embedder);
  auto embedder = make_embedder(spec);
  Json effective = {{"command", "index"}, {"docs", a.docs}, {"taxonomy", a.taxonomy.empty() ? "builtin" : a.taxonomy},
                    {"embedder", spec.to_json()}};
  const std::string hash = config_hash(effective);
  const Index idx = Index::build(load_docs(a.docs), graph, embedder.get());
  const fs::path out(a.out);
  write_config_snapshot(parent_or_cwd(out), effective);
  idx.save(out, hash);
  Json topics = Json::object();
  for (const auto& [t, list] : idx.postings()) topics[t] = list.size();
  print({{"index", out.generic_string()}, {"docs", idx.size()}, {"dim", idx.dim()}, {"postings", topics},
         {"embedder", idx.embedder_id()}, {"config_hash", hash}});
  return kOk;
}

struct AskArgs {
  std::string index, model, taxonomy, embedder, query, topic, generator = "echo", out_dir, prompt_file;
  std::size_t k = 5;
  std::size_t radius = 1;
  std::size_t budget = 1500;
};

int run_ask(const AskArgs& a) {
  const TopicGraph graph = load_taxonomy(a.taxonomy);
  const Index idx = Index::load(a.index);
  auto embedder = make_embedder(load_embedder_spec(a.embedder));
  if (!idx.embedder_id().empty() && idx.embedder_id() != embedder->id()) {
    throw ConfigError("index was built with embedder '" + idx.embedder_id() + "' but the query embedder is '" +
                      embedder->id() + "'");
  }
  TopicIndicator indicator;
  if (!a.topic.empty()) {
    indicator.predicted_topic = a.topic;
  } else if (!a.model.empty()) {
    const Ts3mModel model = Ts3mModel::load(a.model);
    TokenEncoder encoder(model.dims().d_model, model.dims().max_tokens);
    indicator = model.forward(encoder.encode(a.query)).indicator;
  }
  PromptOptions po;
  po.token_budget = a.budget;
  if (!a.prompt_file.empty()) po.prompt_template = read_file(a.prompt_file);
  const RetrievalResult res = retrieve(idx, graph, *embedder, a.query, indicator, a.k, RetrieveOptions{a.radius});
  auto generator = make_client(a.generator);
  const Generation g = integrate_and_generate(a.query, res, idx, *generator, po);
  Json effective = {{"command", "ask"}, {"index", a.index}, {"model", a.model}, {"topic", a.topic}, {"k", a.k},
                    {"radius", a.radius}, {"budget", a.budget}, {"generator", a.generator}};
  Json out = {{"response", g.text}, {"cited", g.cited}, {"topic", indicator.predicted_topic},
              {"retrieval", res.to_json()}, {"config_hash", config_hash(effective)}};
  if (!a.out_dir.empty()) {
    write_config_snapshot(a.out_dir, effective);
    write_file(fs::path(a.out_dir) / "answer.json", Json{{"generation", g.to_json()}, {"summary", out}}.dump(2) + "\n");
  }
  print(out);
  return kOk;
}

struct EvalArgs {
  std::string kind = "mcq", items, model = "constant:A", exemplars, out_dir, rubric_file;
  std::size_t shots = 0;
  std::uint64_t seed = 42;
};

int run_eval(const EvalArgs& a) {
  auto client = make_client(a.model);
  Json effective = {{"command", "eval"}, {"kind", a.kind}, {"items", a.items}, {"model", a.model},
                    {"shots", a.shots}, {"seed", a.seed}, {"exemplars", a.exemplars}};
  const std::string hash = config_hash(effective);
  Json summary;
  std::vector<Json> records;
  if (a.kind == "mcq") {
    const auto items = load_mcq(a.items);
    const auto pool = a.exemplars.empty() ? std::vector<McqItem>{} : load_mcq(a.exemplars);
    McqOptions opts;
    opts.shots = a.shots;
    opts.seed = a.seed;
    const McqReport r = run_mcq(items, *client, opts, pool);
    summary = r.summary();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", r.overall.accuracy);
    summary["accuracy_text"] = buf;
    std::cerr << "eval: accuracy " << buf << " (" << r.overall.correct << "/" << r.overall.total << ")\n";
    for (const auto& rec : r.records) records.push_back(rec.to_json());
  } else if (a.kind == "freetext") {
    const FreeTextReport r = run_freetext(load_freetext(a.items), *client);
    summary = r.summary();
    records = r.records;
  } else if (a.kind == "tournament") {
    const std::string rubric = a.rubric_file.empty() ? kDefaultPairwiseRubric : read_file(a.rubric_file);
    const TournamentReport r = run_tournament(load_pairwise(a.items), *client, rubric);
    summary = r.summary();
    records = r.records;
  } else {
    throw ConfigError("eval kind must be mcq, freetext or tournament");
  }
  summary["config_hash"] = hash;
  if (!a.out_dir.empty()) {
    write_config_snapshot(a.out_dir, effective);
    write_jsonl(fs::path(a.out_dir) / "items.jsonl", records, {{"config_hash", hash}, {"artifact", "eval_items"}});
    write_file(fs::path(a.out_dir) / "report.json", summary.dump(2) + "\n");
  }
  print(summary);
  return kOk;
}

struct MinitestArgs {
  std::string pairs, embedder, out_dir;
  double tau = 0.9;
};

int run_minitest(const MinitestArgs& a) {
  const EmbedderSpec spec = load_embedder_spec(a.embedder);
  auto embedder = make_embedder(spec);
  Json effective = {{"command", "minitest"}, {"pairs", a.pairs}, {"tau", a.tau}, {"embedder", spec.to_json()}};
  Json report = eval_similarity_minitest(load_pairs(a.pairs), *embedder, a.tau).to_json();
  report["config_hash"] = config_hash(effective);
  if (!a.out_dir.empty()) {
    write_config_snapshot(a.out_dir, effective);
    write_file(fs::path(a.out_dir) / "minitest.json", report.dump(2) + "\n");
  }
  print(report);
  return kOk;
}

template <typename Fn>
int guarded(Fn fn) {
  try {
    return fn();
  } catch (const GenerationError& e) {
    std::cerr << "error: " << e.what() << "\nprompt was:\n" << e.prompt() << "\n";
    return kRemote;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ValidationError& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    return kInvalidData;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return kInvalidData;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kRemote;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kRemote;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Json::exception& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    return kInvalidData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic-aware curation, training, retrieval and evaluation for food-domain QA"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 unexpected, 2 config/usage, 3 invalid data, 4 i/o, 5 remote service, 6 numeric, "
      "7 quarantine limit exceeded. Client credentials: TOPICRAG_API_KEY.");
  int code = kOk;

  CurateArgs ca;
  auto* curate = app.add_subcommand("curate", "Run the curation pipeline described by a config file");
  curate->add_option("-c,--config", ca.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  curate->add_flag("--resume", ca.resume, "Continue after the last checkpoint written by the same config");
  curate->add_option("--from-stage", ca.from_stage, "Rerun from this stage using the previous stage's checkpoint");
  curate->callback([&] { code = guarded([&] { return run_curate(ca); }); });

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the topic model on labeled question-answer samples");
  train->add_option("--data", ta.data, "Samples (JSONL) with topic labels")->required()->check(CLI::ExistingFile);
  train->add_option("--taxonomy", ta.taxonomy, "Topic taxonomy (JSON); built-in food taxonomy by default");
  train->add_option("--config", ta.config, "JSON with optional \"dims\" and \"train\" sections");
  train->add_option("-o,--out", ta.out, "Checkpoint path")->required();
  train->add_option("--log", ta.log, "Per-step loss log (JSONL); next to the checkpoint by default");
  train->add_option("--epochs", ta.epochs, "Epochs");
  train->add_option("--batch-size", ta.batch_size, "Samples per optimizer step");
  train->add_option("--lr", ta.lr, "Peak learning rate of the cosine schedule");
  train->add_option("--dropout", ta.dropout, "Dropout rate");
  train->add_option("--seed", ta.seed, "Root seed");
  train->add_option("--stop-at-accuracy", ta.stop_at, "Stop once training accuracy reaches this fraction");
  train->callback([&] { code = guarded([&] { return run_train(ta); }); });

  IndexArgs ia;
  auto* index = app.add_subcommand("index", "Build a retrieval index from knowledge documents");
  index->add_option("--docs", ia.docs, "Documents (JSONL)")->required()->check(CLI::ExistingFile);
  index->add_option("--taxonomy", ia.taxonomy, "Topic taxonomy (JSON)");
  index->add_option("--embedder", ia.embedder, "Embedder spec (JSON); offline hashing by default");
  index->add_option("-o,--out", ia.out, "Index file")->required();
  index->callback([&] { code = guarded([&] { return run_index(ia); }); });

  AskArgs aa;
  auto* ask = app.add_subcommand("ask", "Answer a question with topic-routed retrieval");
  ask->add_option("--index", aa.index, "Index file")->required()->check(CLI::ExistingFile);
  ask->add_option("-q,--query", aa.query, "Question text")->required();
  ask->add_option("--model", aa.model, "Topic model checkpoint used to predict the query topic");
  ask->add_option("--topic", aa.topic, "Topic id; overrides --model");
  ask->add_option("--taxonomy", aa.taxonomy, "Topic taxonomy (JSON)");
  ask->add_option("--embedder", aa.embedder, "Embedder spec (JSON); must match the index");
  ask->add_option("--generator", aa.generator, "Generator: http://..., echo, constant:TEXT or scripted:FILE");
  ask->add_option("-k", aa.k, "Documents to retrieve");
  ask->add_option("--radius", aa.radius, "Taxonomy radius of the topic stage");
  ask->add_option("--budget", aa.budget, "Prompt token budget");
  ask->add_option("--prompt-file", aa.prompt_file, "Prompt template with {context} and {query}");
  ask->add_option("--out-dir", aa.out_dir, "Write answer.json and a config snapshot here");
  ask->callback([&] { code = guarded([&] { return run_ask(aa); }); });

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a model client on a benchmark file");
  eval->add_option("--kind", ea.kind, "mcq, freetext or tournament")->check(CLI::IsMember({"mcq", "freetext", "tournament"}));
  eval->add_option("--items", ea.items, "Benchmark items (JSONL)")->required()->check(CLI::ExistingFile);
  eval->add_option("--model", ea.model, "Model or judge client spec");
  eval->add_option("--shots", ea.shots, "0 or 5 exemplars per prompt")->check(CLI::IsMember({0, 5}));
  eval->add_option("--exemplars", ea.exemplars, "Exemplar pool (JSONL) for few-shot prompts");
  eval->add_option("--seed", ea.seed, "Exemplar draw seed");
  eval->add_option("--rubric-file", ea.rubric_file, "Judge rubric for tournaments");
  eval->add_option("--out-dir", ea.out_dir, "Write report.json, items.jsonl and a config snapshot here");
  eval->callback([&] { code = guarded([&] { return run_eval(ea); }); });

  MinitestArgs ma;
  auto* minitest = app.add_subcommand("minitest", "Accuracy and F1 of an embedder on labeled similarity pairs");
  minitest->add_option("--pairs", ma.pairs, "Pairs (JSONL) with a, b and label")->required()->check(CLI::ExistingFile);
  minitest->add_option("--tau", ma.tau, "Similarity threshold");
  minitest->add_option("--embedder", ma.embedder, "Embedder spec (JSON)");
  minitest->add_option("--out-dir", ma.out_dir, "Write minitest.json and a config snapshot here");
  minitest->callback([&] { code = guarded([&] { return run_minitest(ma); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  return code;
}
