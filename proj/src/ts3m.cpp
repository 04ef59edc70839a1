#include "topicrag/ts3m.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "topicrag/error.hpp"
#include "topicrag/sample.hpp"
#include "topicrag/ssm.hpp"
#include "topicrag/text.hpp"

namespace topicrag {

namespace {

constexpr const char* kParamNames[kTs3mParamCount] = {
    "w1",    "b1",    "conv1", "conv2", "stem_w", "stem_b", "stem_conv", "a_log", "delta_raw", "ssm_b", "ssm_c",
    "ssm_d", "proj_x", "proj_y", "w_g1", "w_g2",  "w_o",     "b_o",     "upsample", "nsp_m", "nsp_b",
};

constexpr const char* kCheckpointFormat = "topicrag-ts3m";
constexpr int kCheckpointVersion = 1;

std::size_t idx(Ts3mParam p) { return static_cast<std::size_t>(p); }

}  // namespace

void Ts3mDims::validate() const {
  const std::pair<const char*, std::size_t> all[] = {
      {"d_model", d_model}, {"d_proj", d_proj}, {"d_conv", d_conv},       {"d_fused", d_fused},
      {"d_state", d_state}, {"topics", topics}, {"kernel", kernel},       {"max_tokens", max_tokens},
  };
  for (const auto& [name, v] : all) {
    if (v == 0) throw ConfigError(std::string("TS3M dimension ") + name + " must be positive");
  }
}

Json Ts3mDims::to_json() const {
  return {{"d_model", d_model}, {"d_proj", d_proj}, {"d_conv", d_conv},   {"d_fused", d_fused},
          {"d_state", d_state}, {"topics", topics}, {"kernel", kernel}, {"max_tokens", max_tokens}};
}

Ts3mDims Ts3mDims::from_json(const Json& j) {
  Ts3mDims d;
  d.d_model = j.value("d_model", d.d_model);
  d.d_proj = j.value("d_proj", d.d_proj);
  d.d_conv = j.value("d_conv", d.d_conv);
  d.d_fused = j.value("d_fused", d.d_fused);
  d.d_state = j.value("d_state", d.d_state);
  d.topics = j.value("topics", d.topics);
  d.kernel = j.value("kernel", d.kernel);
  d.max_tokens = j.value("max_tokens", d.max_tokens);
  d.validate();
  return d;
}

const char* param_name(Ts3mParam p) { return kParamNames[idx(p)]; }

std::vector<std::size_t> param_shape(const Ts3mDims& d, Ts3mParam p) {
  switch (p) {
    case Ts3mParam::kW1:
    case Ts3mParam::kStemW: return {d.d_model, d.d_proj};
    case Ts3mParam::kB1:
    case Ts3mParam::kStemB: return {d.d_proj};
    case Ts3mParam::kConv1:
    case Ts3mParam::kStemConv: return {d.kernel, d.d_proj, d.d_conv};
    case Ts3mParam::kConv2: return {d.kernel, d.d_conv, d.d_conv};
    case Ts3mParam::kALog:
    case Ts3mParam::kDeltaRaw: return {d.d_state};
    case Ts3mParam::kSsmB: return {d.d_state, d.d_conv};
    case Ts3mParam::kSsmC: return {d.d_conv, d.d_state};
    case Ts3mParam::kSsmD: return {d.d_conv, d.d_conv};
    case Ts3mParam::kProjX:
    case Ts3mParam::kProjY: return {d.d_conv, d.d_fused};
    case Ts3mParam::kWG1:
    case Ts3mParam::kWG2:
    case Ts3mParam::kNspM: return {d.d_fused, d.d_fused};
    case Ts3mParam::kWO: return {d.d_fused, d.topics};
    case Ts3mParam::kBO: return {d.topics};
    case Ts3mParam::kUpsample: return {d.topics, d.d_model};
    case Ts3mParam::kNspB: return {1};
    case Ts3mParam::kCount: break;
  }
  throw Error("invalid TS3M parameter slot");
}

TopicIndicator make_indicator(const Tensor& logits, const std::vector<std::string>& labels) {
  TopicIndicator ind;
  ind.logits = logits;
  ind.probabilities = softmax_rows(logits).values();
  const auto& v = logits.values();
  ind.predicted = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  if (ind.predicted < labels.size()) ind.predicted_topic = labels[ind.predicted];
  return ind;
}

std::vector<std::size_t> aligned_rows(std::size_t tokens, std::size_t kernel) {
  const std::size_t pad = tokens < kernel ? kernel - tokens : 0;
  const std::size_t out = (tokens + pad - kernel) / 2 + 1;
  std::vector<std::size_t> rows(out);
  for (std::size_t i = 0; i < out; ++i) rows[i] = std::min(tokens - 1, 2 * i + kernel - 1);
  return rows;
}

Ts3mTrace ts3m_forward(Tape& tape, const Ts3mDims& dims, std::span<const Var> params, const Var& tokens,
                       const Dropout* dropout) {
  if (params.size() != kTs3mParamCount) throw Error("ts3m_forward: wrong number of parameters");
  const Tensor& tv = tokens.value();
  if (tv.rank() != 2 || tv.cols() != dims.d_model) {
    throw DimensionError("ts3m_forward: tokens " + shape_string(tv.shape()) + " must be [n x " +
                         std::to_string(dims.d_model) + "]");
  }
  const std::size_t n = tv.rows();
  if (n > dims.max_tokens) {
    throw ValidationError("sequence of " + std::to_string(n) + " tokens exceeds the limit of " +
                          std::to_string(dims.max_tokens));
  }
  auto p = [&](Ts3mParam slot) { return params[idx(slot)]; };
  auto drop = [&](const Var& v) {
    if (dropout == nullptr || dropout->rng == nullptr || dropout->rate <= 0.0) return v;
    Tensor mask(v.shape());
    const double keep = 1.0 - dropout->rate;
    for (auto& m : mask.values()) m = dropout->rng->uniform() < keep ? 1.0 / keep : 0.0;
    return mul(v, tape.constant(std::move(mask)));
  };

  Ts3mTrace tr;
  // Content branch: projection, then two conv + LeakyReLU stages.
  const Var projected = affine(tokens, p(Ts3mParam::kW1), p(Ts3mParam::kB1));
  const Var c1_pre = conv1d_same(projected, p(Ts3mParam::kConv1));
  const Var c1 = drop(leaky_relu(c1_pre));
  const std::size_t tail = n < dims.kernel ? dims.kernel - n : 0;
  const Var c2_pre = conv1d(c1, p(Ts3mParam::kConv2), 2, 0, tail);
  tr.content = drop(leaky_relu(c2_pre));

  // Topic branch: projection + conv stem feeding the state space scan.
  const Var stem = affine(tokens, p(Ts3mParam::kStemW), p(Ts3mParam::kStemB));
  const Var s_pre = conv1d_same(stem, p(Ts3mParam::kStemConv));
  const Var ssm_in = drop(leaky_relu(s_pre));
  const Var a = neg_exp(p(Ts3mParam::kALog));
  const Var delta = softplus(p(Ts3mParam::kDeltaRaw));
  const Var y = selective_scan(ssm_in, a, delta, p(Ts3mParam::kSsmB), p(Ts3mParam::kSsmC), p(Ts3mParam::kSsmD));
  tr.topic_state = gather_rows(y, aligned_rows(n, dims.kernel));

  const Var x_s = matmul(tr.content, p(Ts3mParam::kProjX));
  const Var y_s = matmul(tr.topic_state, p(Ts3mParam::kProjY));
  tr.fused = sigmoid(add(matmul(x_s, p(Ts3mParam::kWG1)), matmul(y_s, p(Ts3mParam::kWG2))));

  const Var scores = affine(tr.fused, p(Ts3mParam::kWO), p(Ts3mParam::kBO));
  tr.logits = global_max_pool(scores);
  tr.topic_token = matmul(softmax_rows(tr.logits), p(Ts3mParam::kUpsample));
  tr.augmented = concat_rows(tr.topic_token, tokens);
  tr.kink_inputs = {c1_pre, c2_pre, s_pre, scores};
  return tr;
}

Var nsp_probability(const Var& fused_instruction, const Var& fused_response, const Var& nsp_m, const Var& nsp_b) {
  const Var gi = global_max_pool(fused_instruction);
  const Var gr = global_max_pool(fused_response);
  const Var logit = add(sum(mul(matmul(gi, nsp_m), gr)), nsp_b);
  return sigmoid(logit);
}

double loss_nsp(double prob, int label) {
  Tape t;
  return binary_cross_entropy(t.constant(Tensor({1}, {prob})), label).value()[0];
}

double hierarchy_factor(std::size_t distance, HierarchyWeight mode) {
  const double d = static_cast<double>(distance);
  return mode == HierarchyWeight::kExpNegDistance ? std::exp(-d) : 1.0 + d;
}

Var topic_hierarchy_loss(const Var& logits, std::size_t true_label, const TopicGraph& graph,
                         const std::vector<std::string>& labels, HierarchyWeight mode) {
  if (true_label >= labels.size()) throw ValidationError("true topic index outside the label set");
  const auto& v = logits.value().values();
  const auto predicted = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  const std::size_t d = graph.distance(labels[true_label], labels.at(predicted));
  return scale(cross_entropy_logits(logits, true_label), hierarchy_factor(d, mode));
}

double loss_th(const Tensor& logits, const std::string& true_topic, const TopicGraph& graph,
               const std::vector<std::string>& labels, HierarchyWeight mode) {
  auto it = std::find(labels.begin(), labels.end(), true_topic);
  if (it == labels.end()) throw ValidationError("unknown topic '" + true_topic + "'");
  Tape t;
  return topic_hierarchy_loss(t.constant(logits), static_cast<std::size_t>(it - labels.begin()), graph, labels,
                              mode)
      .value()[0];
}

Ts3mModel::Ts3mModel(Ts3mDims dims, std::vector<std::string> labels, std::uint64_t seed)
    : dims_(dims), labels_(std::move(labels)) {
  dims_.validate();
  if (!labels_.empty() && labels_.size() != dims_.topics) {
    throw ConfigError("TS3M has " + std::to_string(dims_.topics) + " topic outputs but " +
                      std::to_string(labels_.size()) + " labels");
  }
  Rng rng(seed);
  params_.reserve(kTs3mParamCount);
  for (std::size_t i = 0; i < kTs3mParamCount; ++i) {
    const auto slot = static_cast<Ts3mParam>(i);
    Tensor t(param_shape(dims_, slot));
    switch (slot) {
      case Ts3mParam::kB1:
      case Ts3mParam::kStemB:
      case Ts3mParam::kBO:
      case Ts3mParam::kNspB: break;
      case Ts3mParam::kALog:
        // A = -(1, 2, ..., d_state): distinct stable decay rates.
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = std::log(static_cast<double>(k + 1));
        break;
      case Ts3mParam::kDeltaRaw:
        // delta log-uniform in [1e-2, 1e-1], stored through the softplus inverse.
        for (auto& v : t.values()) {
          const double dt = std::exp(rng.uniform(std::log(1e-2), std::log(1e-1)));
          v = std::log(std::expm1(dt));
        }
        break;
      default: {
        const auto& shape = t.shape();
        std::size_t fan_in = shape[0];
        if (shape.size() == 3) fan_in = shape[0] * shape[1];
        const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.values()) v = sd * rng.normal();
      }
    }
    params_.emplace_back(kParamNames[i], std::move(t));
  }
}

std::vector<Var> Ts3mModel::bind(Tape& tape) {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (auto& p : params_) vars.push_back(tape.parameter(p));
  return vars;
}

std::vector<Var> Ts3mModel::bind_constants(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.constant(p.value));
  return vars;
}

Ts3mOutput Ts3mModel::forward(const Tensor& tokens) const {
  if (tokens.size() == 0 || tokens.rows() == 0) throw ValidationError("TS3M input has no tokens");
  Tape tape;
  const auto vars = bind_constants(tape);
  const auto tr = ts3m_forward(tape, dims_, vars, tape.constant(tokens));
  return {make_indicator(tr.logits.value(), labels_), tr.augmented.value()};
}

Tensor Ts3mModel::content_branch(const Tensor& tokens) const {
  Tape tape;
  const auto vars = bind_constants(tape);
  return ts3m_forward(tape, dims_, vars, tape.constant(tokens)).content.value();
}

Tensor Ts3mModel::gate_fuse(const Tensor& content, const Tensor& topic_state) const {
  if (!content.same_shape(topic_state)) {
    throw DimensionError("gate_fuse: content " + shape_string(content.shape()) + " and topic state " +
                         shape_string(topic_state.shape()) + " differ");
  }
  Tape tape;
  const Var x = matmul(tape.constant(content), tape.constant(param(Ts3mParam::kProjX).value));
  const Var y = matmul(tape.constant(topic_state), tape.constant(param(Ts3mParam::kProjY).value));
  const Var g1 = tape.constant(param(Ts3mParam::kWG1).value);
  const Var g2 = tape.constant(param(Ts3mParam::kWG2).value);
  return sigmoid(add(matmul(x, g1), matmul(y, g2))).value();
}

TopicIndicator Ts3mModel::encode_indicator(const Tensor& fused) const {
  Tape tape;
  const Var scores = affine(tape.constant(fused), tape.constant(param(Ts3mParam::kWO).value),
                            tape.constant(param(Ts3mParam::kBO).value));
  return make_indicator(global_max_pool(scores).value(), labels_);
}

Json Ts3mModel::to_json() const {
  Json params = Json::object();
  for (const auto& p : params_) params[p.name] = {{"shape", p.value.shape()}, {"data", p.value.values()}};
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"dims", dims_.to_json()},
          {"labels", labels_},
          {"params", params}};
}

Ts3mModel Ts3mModel::from_json(const Json& j) {
  if (j.value("format", "") != kCheckpointFormat) throw ValidationError("not a TS3M checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ValidationError("unsupported TS3M checkpoint version " + std::to_string(j.value("version", 0)));
  }
  Ts3mModel model(Ts3mDims::from_json(j.at("dims")), j.at("labels").get<std::vector<std::string>>(), 0);
  const Json& params = j.at("params");
  for (auto& p : model.params_) {
    if (!params.contains(p.name)) throw ValidationError("checkpoint lacks parameter '" + p.name + "'");
    const auto shape = params[p.name].at("shape").get<std::vector<std::size_t>>();
    if (shape != p.value.shape()) {
      throw ValidationError("checkpoint parameter '" + p.name + "' has shape " + shape_string(shape) +
                            ", expected " + shape_string(p.value.shape()));
    }
    p.value = Tensor(shape, params[p.name].at("data").get<std::vector<double>>());
    p.zero_grad();
  }
  return model;
}

void Ts3mModel::save(const std::filesystem::path& path, const std::string& hash) const {
  Json j = to_json();
  if (!hash.empty()) j["config_hash"] = hash;
  write_file(path, j.dump());
}

Ts3mModel Ts3mModel::load(const std::filesystem::path& path) { return from_json(Json::parse(read_file(path))); }

TokenEncoder::TokenEncoder(std::size_t d_model, std::size_t max_tokens)
    : embedder_(d_model, 1, 3), max_tokens_(max_tokens) {}

Tensor TokenEncoder::encode(std::string_view s) {
  auto tokens = text::tokenize(s);
  if (tokens.empty()) throw ValidationError("text has no tokens to encode");
  if (tokens.size() > max_tokens_) tokens.resize(max_tokens_);
  const std::size_t d = embedder_.embed("x").dim();
  Tensor out({tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto it = cache_.find(tokens[i]);
    if (it == cache_.end()) it = cache_.emplace(tokens[i], embedder_.embed(tokens[i]).values).first;
    std::copy(it->second.begin(), it->second.end(), &out[i * d]);
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (lambda1 < 0.0 || lambda2_start < 0.0 || lambda2_end < 0.0) throw ConfigError("loss weights must be >= 0");
  if (lambda1 + std::max(lambda2_start, lambda2_end) <= 0.0) throw ConfigError("loss weights are all zero");
  if (max_sequence_tokens == 0) throw ConfigError("max_sequence_tokens must be >= 1");
}

Json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"schedule", "cosine"},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"dropout", dropout},
          {"max_sequence_tokens", max_sequence_tokens},
          {"lambda1", lambda1},
          {"lambda2_start", lambda2_start},
          {"lambda2_end", lambda2_end},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"hierarchy_weight", hierarchy_weight == HierarchyWeight::kExpNegDistance ? "exp_neg" : "one_plus"},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  if (j.contains("schedule") && j["schedule"] != "cosine") throw ConfigError("only the cosine schedule is supported");
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout = j.value("dropout", c.dropout);
  c.max_sequence_tokens = j.value("max_sequence_tokens", c.max_sequence_tokens);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2_start = j.value("lambda2_start", c.lambda2_start);
  c.lambda2_end = j.value("lambda2_end", c.lambda2_end);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  const std::string hw = j.value("hierarchy_weight", "exp_neg");
  if (hw == "exp_neg") {
    c.hierarchy_weight = HierarchyWeight::kExpNegDistance;
  } else if (hw == "one_plus") {
    c.hierarchy_weight = HierarchyWeight::kOnePlusDistance;
  } else {
    throw ConfigError("hierarchy_weight must be \"exp_neg\" or \"one_plus\"");
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Json TrainLogRecord::to_json() const {
  return {{"step", step}, {"L_NSP", l_nsp}, {"L_TH", l_th}, {"L_Total", l_total}, {"lr", lr}, {"lambda2", lambda2}};
}

namespace {

struct EncodedSample {
  Tensor instruction;
  Tensor response;
  std::size_t label = 0;
};

class Adam {
 public:
  Adam(const std::vector<Parameter>& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }

  void step(std::vector<Parameter>& params, double lr, double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i] * grad_scale;
        m_[k][i] = cfg_.adam_beta1 * m_[k][i] + (1.0 - cfg_.adam_beta1) * g;
        v_[k][i] = cfg_.adam_beta2 * v_[k][i] + (1.0 - cfg_.adam_beta2) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace

double topic_accuracy(const Ts3mModel& model, const std::vector<InstructionSample>& samples, TokenEncoder& encoder) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (!s.topic) continue;
    const auto out = model.forward(encoder.encode(s.question));
    if (out.indicator.predicted_topic == *s.topic) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train_ts3m(const std::vector<InstructionSample>& samples, const TopicGraph& graph, const Ts3mDims& dims,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("training set is empty");
  const auto& labels = graph.labels();
  if (labels.size() != dims.topics) {
    throw ConfigError("TS3M topic count " + std::to_string(dims.topics) + " does not match the " +
                      std::to_string(labels.size()) + "-topic label set");
  }

  Ts3mDims run_dims = dims;
  run_dims.max_tokens = std::min(dims.max_tokens, cfg.max_sequence_tokens);
  TokenEncoder encoder(dims.d_model, run_dims.max_tokens);

  std::vector<EncodedSample> data;
  std::map<std::size_t, std::vector<std::size_t>> by_topic;
  data.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.topic) throw ValidationError("training sample '" + s.id + "' has no topic label");
    const std::size_t label = graph.label_index(*s.topic);
    by_topic[label].push_back(data.size());
    data.push_back({encoder.encode(s.question), encoder.encode(s.answer), label});
  }

  Rng rng(cfg.seed);
  TrainResult result{Ts3mModel(dims, labels, rng.next_u64()), {}, 0.0, 0};
  Ts3mModel& model = result.model;
  Adam adam(model.params(), cfg);
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const Dropout dropout{cfg.dropout, &rng};

  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double progress = total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 0.0;
      const double lambda2 = cfg.lambda2_start + (cfg.lambda2_end - cfg.lambda2_start) * progress;
      const double lr = cfg.lr * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      for (auto& p : model.params()) p.zero_grad();

      TrainLogRecord rec{step, 0.0, 0.0, 0.0, lr, lambda2};
      for (std::size_t b = start; b < end; ++b) {
        const EncodedSample& ex = data[order[b]];
        // Positive pair: own answer; negative: another answer from the same topic.
        const auto& peers = by_topic[ex.label];
        int nsp_label = 1;
        const Tensor* response = &ex.response;
        if (rng.uniform() < 0.5) {
          std::size_t other = order[b];
          if (peers.size() > 1) {
            while (other == order[b]) other = peers[rng.below(peers.size())];
          } else if (data.size() > 1) {
            while (other == order[b]) other = rng.below(data.size());
          }
          if (other != order[b]) {
            response = &data[other].response;
            nsp_label = 0;
          }
        }
        try {
          Tape tape;
          const auto vars = model.bind(tape);
          const auto tr_i = ts3m_forward(tape, run_dims, vars, tape.constant(ex.instruction), &dropout);
          const auto tr_r = ts3m_forward(tape, run_dims, vars, tape.constant(*response), &dropout);
          const Var prob = nsp_probability(tr_i.fused, tr_r.fused, vars[idx(Ts3mParam::kNspM)],
                                           vars[idx(Ts3mParam::kNspB)]);
          const Var l_nsp = binary_cross_entropy(prob, nsp_label);
          const Var l_th = topic_hierarchy_loss(tr_i.logits, ex.label, graph, labels, cfg.hierarchy_weight);
          const Var total = add(scale(l_nsp, cfg.lambda1), scale(l_th, lambda2));
          tape.backward(total);
          rec.l_nsp += l_nsp.value()[0];
          rec.l_th += l_th.value()[0];
          rec.l_total += total.value()[0];
        } catch (const NumericError& e) {
          throw NumericError("training diverged at step " + std::to_string(step) + " (epoch " +
                             std::to_string(epoch) + "): " + e.what());
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      rec.l_nsp *= inv;
      rec.l_th *= inv;
      rec.l_total *= inv;
      if (!std::isfinite(rec.l_total)) {
        throw NumericError("training diverged at step " + std::to_string(step) + ": L_Total is not finite");
      }
      adam.step(model.params(), lr, inv);
      for (const auto& p : model.params()) {
        if (!p.value.all_finite()) {
          throw NumericError("training diverged at step " + std::to_string(step) + ": parameter '" + p.name +
                             "' is not finite");
        }
      }
      result.log.push_back(rec);
    }
    result.epochs_run = epoch + 1;
    if (on_epoch && on_epoch(epoch, model)) break;
  }
  result.train_accuracy = topic_accuracy(model, samples, encoder);
  return result;
}

}  // namespace topicrag
