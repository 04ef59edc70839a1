#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "topicrag/autodiff.hpp"
#include "topicrag/embeddings.hpp"
#include "topicrag/io.hpp"
#include "topicrag/rng.hpp"
#include "topicrag/topic_graph.hpp"

namespace topicrag {

struct InstructionSample;

struct Ts3mDims {
  std::size_t d_model = 32;   // token embedding width (d_m)
  std::size_t d_proj = 16;    // input projection width (d_l)
  std::size_t d_conv = 16;    // convolution channels (d_c)
  std::size_t d_fused = 16;   // gated representation width (d_s)
  std::size_t d_state = 8;    // SSM latent size
  std::size_t topics = 5;     // P
  std::size_t kernel = 3;     // conv width
  std::size_t max_tokens = 1500;

  void validate() const;
  Json to_json() const;
  static Ts3mDims from_json(const Json& j);
  friend bool operator==(const Ts3mDims&, const Ts3mDims&) = default;
};

// Parameter slots, in checkpoint order.
enum class Ts3mParam : std::size_t {
  kW1,         // [d_m x d_l]   content input projection
  kB1,         // [d_l]
  kConv1,      // [k x d_l x d_c]  same padding, stride 1
  kConv2,      // [k x d_c x d_c]  stride 2, no padding
  kStemW,      // [d_m x d_l]   topic-branch projection
  kStemB,      // [d_l]
  kStemConv,   // [k x d_l x d_c]
  kALog,       // [d_state]     A = -exp(a_log)
  kDeltaRaw,   // [d_state]     delta = softplus(delta_raw)
  kSsmB,       // [d_state x d_c]
  kSsmC,       // [d_c x d_state]
  kSsmD,       // [d_c x d_c]
  kProjX,      // [d_c x d_s]
  kProjY,      // [d_c x d_s]
  kWG1,        // [d_s x d_s]
  kWG2,        // [d_s x d_s]
  kWO,         // [d_s x P]
  kBO,         // [P]
  kUpsample,   // [P x d_m]     topic token = softmax(K) * U
  kNspM,       // [d_s x d_s]   bilinear next-response head
  kNspB,       // [1]
  kCount,
};

inline constexpr std::size_t kTs3mParamCount = static_cast<std::size_t>(Ts3mParam::kCount);
const char* param_name(Ts3mParam p);
std::vector<std::size_t> param_shape(const Ts3mDims& dims, Ts3mParam p);

struct TopicIndicator {
  Tensor logits;                       // K, [1 x P]
  std::vector<double> probabilities;   // softmax(K)
  std::size_t predicted = 0;           // argmax, first index on ties
  std::string predicted_topic;         // label id, empty without a label set
};

TopicIndicator make_indicator(const Tensor& logits, const std::vector<std::string>& labels);

// Dropout masks drawn from an Rng; nullptr on the forward call means eval mode.
struct Dropout {
  double rate = 0.1;
  Rng* rng = nullptr;
};

// Tape nodes of one forward pass.
struct Ts3mTrace {
  Var content;       // X_C2, [n' x d_c]
  Var topic_state;   // SSM output aligned to n' rows, [n' x d_c]
  Var fused;         // T_s, [n' x d_s]
  Var logits;        // K, [1 x P]
  Var topic_token;   // [1 x d_m]
  Var augmented;     // [(n+1) x d_m]
  // Inputs of every piecewise op (LeakyReLU, max pool); used by tests to stay
  // away from kinks when comparing against finite differences.
  std::vector<Var> kink_inputs;
};

// The full network on an arbitrary tape, with parameters given as Vars in
// Ts3mParam order.
Ts3mTrace ts3m_forward(Tape& tape, const Ts3mDims& dims, std::span<const Var> params, const Var& tokens,
                       const Dropout* dropout = nullptr);

// Rows of the SSM output that line up with each stride-2 content row: the
// last input token covered by that convolution window.
std::vector<std::size_t> aligned_rows(std::size_t tokens, std::size_t kernel);

// Probability that `response` follows `instruction`, from the pooled fused
// sequences of both.
Var nsp_probability(const Var& fused_instruction, const Var& fused_response, const Var& nsp_m, const Var& nsp_b);

// -[y log p + (1-y) log(1-p)], p clamped to [1e-7, 1-1e-7].
double loss_nsp(double prob, int label);

enum class HierarchyWeight {
  kExpNegDistance,    // e^{-d(T, T_hat)}, the default
  kOnePlusDistance,   // 1 + d(T, T_hat), opt-in alternative
};

double hierarchy_factor(std::size_t distance, HierarchyWeight mode);

// Distance-weighted cross entropy of the logits against the true label. The
// weight uses the argmax prediction and is treated as a constant.
Var topic_hierarchy_loss(const Var& logits, std::size_t true_label, const TopicGraph& graph,
                         const std::vector<std::string>& labels, HierarchyWeight mode = HierarchyWeight::kExpNegDistance);
double loss_th(const Tensor& logits, const std::string& true_topic, const TopicGraph& graph,
               const std::vector<std::string>& labels, HierarchyWeight mode = HierarchyWeight::kExpNegDistance);

struct Ts3mOutput {
  TopicIndicator indicator;
  Tensor augmented;  // [(n+1) x d_m], topic token first
};

class Ts3mModel {
 public:
  Ts3mModel(Ts3mDims dims, std::vector<std::string> labels, std::uint64_t seed);

  const Ts3mDims& dims() const noexcept { return dims_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }
  Parameter& param(Ts3mParam p) { return params_[static_cast<std::size_t>(p)]; }
  const Parameter& param(Ts3mParam p) const { return params_[static_cast<std::size_t>(p)]; }

  // Inference. Read-only; safe to call concurrently.
  Ts3mOutput forward(const Tensor& tokens) const;
  Tensor content_branch(const Tensor& tokens) const;
  Tensor gate_fuse(const Tensor& content, const Tensor& topic_state) const;
  TopicIndicator encode_indicator(const Tensor& fused) const;

  // Binds every parameter to the tape (gradients accumulate into them).
  std::vector<Var> bind(Tape& tape);
  std::vector<Var> bind_constants(Tape& tape) const;

  Json to_json() const;
  static Ts3mModel from_json(const Json& j);
  void save(const std::filesystem::path& path, const std::string& config_hash = {}) const;
  static Ts3mModel load(const std::filesystem::path& path);

 private:
  Ts3mDims dims_;
  std::vector<std::string> labels_;
  std::vector<Parameter> params_;
};

// Text -> token embedding rows, one offline-hash embedding per metric token.
class TokenEncoder {
 public:
  explicit TokenEncoder(std::size_t d_model, std::size_t max_tokens = 1500);
  // Throws ValidationError when the text has no tokens.
  Tensor encode(std::string_view text);

 private:
  OfflineEmbedder embedder_;
  std::size_t max_tokens_;
  std::unordered_map<std::string, std::vector<double>> cache_;
};

struct TrainConfig {
  double lr = 1e-5;
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double dropout = 0.1;
  std::size_t max_sequence_tokens = 1500;
  double lambda1 = 1.0;
  // lambda2 ramps linearly from start to end over all optimizer steps.
  double lambda2_start = 0.1;
  double lambda2_end = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  HierarchyWeight hierarchy_weight = HierarchyWeight::kExpNegDistance;
  std::uint64_t seed = 42;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct TrainLogRecord {
  std::size_t step = 0;
  double l_nsp = 0.0;
  double l_th = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
  double lambda2 = 0.0;

  Json to_json() const;
};

struct TrainResult {
  Ts3mModel model;
  std::vector<TrainLogRecord> log;
  double train_accuracy = 0.0;
  std::size_t epochs_run = 0;
};

// Optional hook after each epoch; returning true stops training early.
using EpochCallback = std::function<bool(std::size_t epoch, const Ts3mModel& model)>;

// Minimizes lambda1 * L_NSP + lambda2 * L_TH with Adam under a cosine learning
// rate schedule. Every sample needs a topic in the graph's label set.
// Deterministic for a fixed config. Throws ValidationError on an empty or
// unlabeled dataset and NumericError when the loss stops being finite.
TrainResult train_ts3m(const std::vector<InstructionSample>& samples, const TopicGraph& graph, const Ts3mDims& dims,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Fraction of samples whose argmax topic matches their label.
double topic_accuracy(const Ts3mModel& model, const std::vector<InstructionSample>& samples, TokenEncoder& encoder);

}  // namespace topicrag
