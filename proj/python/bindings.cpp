// Python module _topicrag. Structured values cross as JSON text; the topicrag
// package decodes them.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "topicrag/client.hpp"
#include "topicrag/corpus.hpp"
#include "topicrag/embeddings.hpp"
#include "topicrag/error.hpp"
#include "topicrag/eval.hpp"
#include "topicrag/htrag.hpp"
#include "topicrag/io.hpp"
#include "topicrag/metrics.hpp"
#include "topicrag/pipeline.hpp"
#include "topicrag/sample.hpp"
#include "topicrag/ssm.hpp"
#include "topicrag/text.hpp"
#include "topicrag/topic_graph.hpp"
#include "topicrag/ts3m.hpp"

namespace py = pybind11;
using namespace topicrag;

namespace {

using Matrix = std::vector<std::vector<double>>;

Tensor to_tensor(const Matrix& m) {
  if (m.empty()) throw DimensionError("matrix has no rows");
  Tensor t({m.size(), m.front().size()});
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != t.cols()) throw DimensionError("ragged matrix at row " + std::to_string(i));
    for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) = m[i][j];
  }
  return t;
}

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

Json parse(const std::string& text, const char* what) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ValidationError(std::string(what) + " is not valid JSON");
  return j;
}

std::string dump(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::replace); }

RougeVariant rouge_variant(const std::string& v) {
  if (v == "1") return RougeVariant::kRouge1;
  if (v == "2") return RougeVariant::kRouge2;
  if (v == "l" || v == "L") return RougeVariant::kRougeL;
  throw ConfigError("rouge variant must be 1, 2 or L");
}

std::vector<InstructionSample> samples_from(const std::string& json) {
  std::vector<InstructionSample> out;
  for (const auto& j : parse(json, "samples")) out.push_back(InstructionSample::from_json(j));
  return out;
}

// A model is either a client spec string or a Python callable prompt -> reply.
std::unique_ptr<GenerationClient> client_from(const py::object& model) {
  if (py::isinstance<py::str>(model)) return make_client(model.cast<std::string>());
  if (!PyCallable_Check(model.ptr())) throw ConfigError("model must be a client spec or a callable");
  auto fn = model.cast<std::function<std::string(const std::string&)>>();
  return std::make_unique<FunctionClient>([fn](const GenerationRequest& r) { return fn(r.prompt); }, "python");
}

}  // namespace

PYBIND11_MODULE(_topicrag, m) {
  m.doc() = "Topic-routed retrieval, curation and evaluation core";

  // Translators registered later are tried first, so the base goes first.
  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", error.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<IoError>(m, "IoError", error.ptr());
  py::register_exception<TransportError>(m, "TransportError", error.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", error.ptr());
  py::register_exception<GenerationError>(m, "GenerationError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Json::exception& e) {
      PyErr_SetString(py::module_::import("topicrag._topicrag").attr("ValidationError").ptr(), e.what());
    }
  });

  // SSM
  m.def(
      "ssm_discretize",
      [](const std::vector<double>& a_diag, const Matrix& b, const std::vector<double>& delta) {
        const DiscreteSsm s = delta.size() == 1 && a_diag.size() != 1 ? ssm_discretize(a_diag, to_tensor(b), delta[0])
                                                                      : ssm_discretize(a_diag, to_tensor(b), delta);
        return py::make_tuple(s.a_bar, to_matrix(s.b_bar));
      },
      py::arg("a_diag"), py::arg("b"), py::arg("delta"),
      "Zero-order-hold discretization of a diagonal SSM. Returns (a_bar, b_bar).");
  m.def(
      "ssm_scan",
      [](const Matrix& x, const std::vector<double>& a_bar, const Matrix& b_bar, const Matrix& c, const Matrix& d) {
        return to_matrix(ssm_scan(to_tensor(x), DiscreteSsm{a_bar, to_tensor(b_bar)}, to_tensor(c), to_tensor(d)));
      },
      py::arg("x"), py::arg("a_bar"), py::arg("b_bar"), py::arg("c"), py::arg("d"));

  // Metrics
  m.def("tokenize", [](const std::string& s) { return text::tokenize(s); }, py::arg("text"));
  m.def("bleu", &bleu_n, py::arg("candidate"), py::arg("references"), py::arg("n") = 4);
  m.def("gleu", &gleu, py::arg("candidate"), py::arg("references"));
  m.def(
      "rouge", [](const std::string& c, const std::string& r, const std::string& v) { return rouge(c, r, rouge_variant(v)); },
      py::arg("candidate"), py::arg("reference"), py::arg("variant") = "L");
  m.def("distinct", &distinct_n, py::arg("responses"), py::arg("n"));

  // Embeddings
  py::class_<OfflineEmbedder>(m, "OfflineEmbedder")
      .def(py::init<std::size_t>(), py::arg("dim") = 256)
      .def("embed", [](OfflineEmbedder& e, const std::string& s) { return e.embed(s).values; }, py::arg("text"))
      .def_property_readonly("id", &OfflineEmbedder::id);
  m.def(
      "cosine", [](const std::vector<double>& a, const std::vector<double>& b) { return cosine(a, b); }, py::arg("a"),
      py::arg("b"));

  // Taxonomy
  py::class_<TopicGraph>(m, "TopicGraph")
      .def_static("default", &default_taxonomy, py::arg("with_advice") = false)
      .def_static("load", &TopicGraph::load, py::arg("path"))
      .def_static("from_json", [](const std::string& s) { return TopicGraph::from_json(parse(s, "taxonomy")); })
      .def("to_json", [](const TopicGraph& g) { return dump(g.to_json()); })
      .def_property_readonly("labels", &TopicGraph::labels)
      .def_property_readonly("root", &TopicGraph::root)
      .def("__len__", &TopicGraph::size)
      .def("__contains__", &TopicGraph::contains)
      .def("distance", &TopicGraph::distance, py::arg("a"), py::arg("b"))
      .def("within", &TopicGraph::within, py::arg("topic"), py::arg("radius"));

  // Retrieval index
  py::class_<Index>(m, "Index")
      .def_static(
          "build",
          [](const std::string& docs_json, const TopicGraph& g, const std::string& embedder_json) {
            std::vector<KnowledgeDoc> docs;
            for (const auto& j : parse(docs_json, "docs")) docs.push_back(KnowledgeDoc::from_json(j));
            auto embedder = make_embedder(EmbedderSpec::from_json(parse(embedder_json, "embedder")));
            return Index::build(std::move(docs), g, embedder.get());
          },
          py::arg("docs_json"), py::arg("graph"), py::arg("embedder_json") = "{}")
      .def_static("load", &Index::load, py::arg("path"))
      .def("save", &Index::save, py::arg("path"), py::arg("config_hash") = "")
      .def("__len__", &Index::size)
      .def_property_readonly("dim", &Index::dim)
      .def_property_readonly("embedder_id", &Index::embedder_id)
      .def(
          "retrieve",
          [](const Index& idx, const TopicGraph& g, const std::string& query, const std::string& topic, std::size_t k,
             std::size_t radius, const std::string& embedder_json) {
            auto embedder = make_embedder(EmbedderSpec::from_json(parse(embedder_json, "embedder")));
            TopicIndicator ind;
            ind.predicted_topic = topic;
            return dump(retrieve(idx, g, *embedder, query, ind, k, {radius}).to_json());
          },
          py::arg("graph"), py::arg("query"), py::arg("topic") = "", py::arg("k") = 5, py::arg("radius") = 1,
          py::arg("embedder_json") = "{}")
      .def(
          "retrieve_vector",
          [](const Index& idx, const TopicGraph& g, const std::vector<double>& q, const std::string& topic, std::size_t k,
             std::size_t radius) { return dump(retrieve(idx, g, q, topic, k, {radius}).to_json()); },
          py::arg("graph"), py::arg("query"), py::arg("topic") = "", py::arg("k") = 5, py::arg("radius") = 1);

  // Curation
  m.def(
      "dedup",
      [](const std::string& samples_json, double tau, const std::string& embedder_json) {
        auto samples = samples_from(samples_json);
        auto embedder = make_embedder(EmbedderSpec::from_json(parse(embedder_json, "embedder")));
        embed_samples(samples, *embedder);
        const DedupResult r = threshold_dedup(samples, tau);
        Json kept = Json::array(), removed = Json::array();
        for (const auto& s : r.kept) kept.push_back(s.to_json(false));
        for (const auto& x : r.removed) removed.push_back({{"id", x.removed_id}, {"kept", x.kept_id}, {"cosine", x.cosine}});
        return dump({{"kept", kept}, {"removed", removed}});
      },
      py::arg("samples_json"), py::arg("tau") = 0.9, py::arg("embedder_json") = "{}");
  m.def(
      "minitest",
      [](const std::vector<std::tuple<std::string, std::string, int>>& pairs, double tau, const std::string& embedder_json) {
        std::vector<LabeledPair> lp;
        for (const auto& [a, b, label] : pairs) lp.push_back({a, b, label});
        auto embedder = make_embedder(EmbedderSpec::from_json(parse(embedder_json, "embedder")));
        return dump(eval_similarity_minitest(lp, *embedder, tau).to_json());
      },
      py::arg("pairs"), py::arg("tau") = 0.9, py::arg("embedder_json") = "{}");
  m.def(
      "curate",
      [](const std::filesystem::path& config, bool resume, std::optional<std::string> from_stage) {
        const PipelineConfig cfg = PipelineConfig::load(config);
        CurateOptions opts;
        opts.resume = resume;
        opts.from_stage = std::move(from_stage);
        py::gil_scoped_release release;
        return dump(cmd_curate(cfg, opts).summary());
      },
      py::arg("config"), py::arg("resume") = false, py::arg("from_stage") = std::nullopt);

  // Topic model
  m.def(
      "train",
      [](const std::string& samples_json, const std::string& config_json, const std::filesystem::path& out) {
        const auto samples = samples_from(samples_json);
        const Json doc = parse(config_json, "config");
        const TopicGraph graph = default_taxonomy();
        Ts3mDims dims = Ts3mDims::from_json(doc.value("dims", Json::object()));
        if (!doc.value("dims", Json::object()).contains("topics")) dims.topics = graph.label_count();
        const TrainConfig tc = TrainConfig::from_json(doc.value("train", Json::object()));
        py::gil_scoped_release release;
        const TrainResult r = train_ts3m(samples, graph, dims, tc);
        r.model.save(out, config_hash(doc));
        return dump({{"epochs_run", r.epochs_run}, {"steps", r.log.size()}, {"train_accuracy", r.train_accuracy},
                     {"final_loss", r.log.empty() ? 0.0 : r.log.back().l_total}});
      },
      py::arg("samples_json"), py::arg("config_json"), py::arg("out"));
  m.def(
      "predict_topic",
      [](const std::filesystem::path& checkpoint, const std::string& query) {
        const Ts3mModel model = Ts3mModel::load(checkpoint);
        TokenEncoder encoder(model.dims().d_model, model.dims().max_tokens);
        return model.forward(encoder.encode(query)).indicator.predicted_topic;
      },
      py::arg("checkpoint"), py::arg("query"));

  // Evaluation
  m.def(
      "run_mcq",
      [](const std::filesystem::path& items, const py::object& model, std::size_t shots, std::uint64_t seed,
         std::optional<std::filesystem::path> exemplars) {
        auto client = client_from(model);
        McqOptions opts;
        opts.shots = shots;
        opts.seed = seed;
        const auto pool = exemplars ? load_mcq(*exemplars) : std::vector<McqItem>{};
        const McqReport r = run_mcq(load_mcq(items), *client, opts, pool);
        Json j = r.summary();
        Json recs = Json::array();
        for (const auto& rec : r.records) recs.push_back(rec.to_json());
        j["records"] = recs;
        return dump(j);
      },
      py::arg("items"), py::arg("model"), py::arg("shots") = 0, py::arg("seed") = 42, py::arg("exemplars") = std::nullopt);
  m.def(
      "parse_judge_reply", [](const std::string& reply) { return dump(parse_judge_reply(reply).to_json()); },
      py::arg("reply"));
}
