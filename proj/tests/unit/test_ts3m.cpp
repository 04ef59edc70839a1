#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support/helpers.hpp"
#include "support/synthetic.hpp"
#include "support/ts3m_check.hpp"
#include "topicrag/error.hpp"
#include "topicrag/sample.hpp"
#include "topicrag/ts3m.hpp"

using namespace topicrag;
using topicrag::testing::random_tensor;

namespace {

Ts3mDims small_dims() {
  Ts3mDims d;
  d.d_model = 8;
  d.d_proj = 6;
  d.d_conv = 5;
  d.d_fused = 4;
  d.d_state = 3;
  d.topics = 5;
  return d;
}

double plain_cross_entropy(const Tensor& logits, std::size_t label) {
  double m = -INFINITY;
  for (double v : logits.values()) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - m);
  return -(logits[label] - m - std::log(z));
}

}  // namespace

TEST(Ts3m, AlignedRows) {
  EXPECT_EQ(aligned_rows(5, 3), (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(aligned_rows(6, 3), (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(aligned_rows(7, 3), (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(aligned_rows(1, 3), (std::vector<std::size_t>{0}));
  EXPECT_EQ(aligned_rows(2, 3), (std::vector<std::size_t>{1}));
  EXPECT_EQ(aligned_rows(4, 1), (std::vector<std::size_t>{0, 2}));
}

TEST(Ts3m, ParamShapes) {
  const Ts3mDims d = small_dims();
  EXPECT_EQ(param_shape(d, Ts3mParam::kW1), (std::vector<std::size_t>{8, 6}));
  EXPECT_EQ(param_shape(d, Ts3mParam::kConv2), (std::vector<std::size_t>{3, 5, 5}));
  EXPECT_EQ(param_shape(d, Ts3mParam::kSsmB), (std::vector<std::size_t>{3, 5}));
  EXPECT_EQ(param_shape(d, Ts3mParam::kUpsample), (std::vector<std::size_t>{5, 8}));
  const Ts3mModel m(d, default_taxonomy().labels(), 1);
  for (std::size_t i = 0; i < kTs3mParamCount; ++i)
    EXPECT_EQ(m.params()[i].value.shape(), param_shape(d, static_cast<Ts3mParam>(i))) << param_name(static_cast<Ts3mParam>(i));
}

TEST(Ts3m, ForwardShapes) {
  const Ts3mModel m(small_dims(), default_taxonomy().labels(), 3);
  Rng rng(1);
  for (std::size_t n : {1u, 2u, 3u, 4u, 9u}) {
    const Ts3mOutput out = m.forward(random_tensor(rng, {n, 8}));
    EXPECT_EQ(out.augmented.shape(), (std::vector<std::size_t>{n + 1, 8}));
    EXPECT_EQ(out.indicator.logits.shape(), (std::vector<std::size_t>{1, 5}));
    double total = 0.0;
    for (double p : out.indicator.probabilities) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_FALSE(out.indicator.predicted_topic.empty());
  }
}

TEST(Ts3m, ForwardKeepsTokensAfterTopicToken) {
  const Ts3mModel m(small_dims(), default_taxonomy().labels(), 3);
  Rng rng(2);
  const Tensor x = random_tensor(rng, {4, 8});
  const Tensor aug = m.forward(x).augmented;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(aug.at(r + 1, c), x.at(r, c));
}

TEST(Ts3m, ZeroWeightsGiveMeanUpsampleRow) {
  Ts3mModel m(small_dims(), default_taxonomy().labels(), 4);
  for (auto& p : m.params()) p.value = Tensor(p.value.shape());
  Rng rng(3);
  m.param(Ts3mParam::kUpsample).value = random_tensor(rng, {5, 8});
  const Ts3mOutput out = m.forward(random_tensor(rng, {3, 8}));
  for (double p : out.indicator.probabilities) EXPECT_NEAR(p, 0.2, 1e-15);
  EXPECT_EQ(out.indicator.predicted, 0u);  // first index on ties
  const Tensor& u = m.param(Ts3mParam::kUpsample).value;
  for (std::size_t c = 0; c < 8; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 5; ++r) mean += u.at(r, c) / 5.0;
    EXPECT_NEAR(out.augmented.at(0, c), mean, 1e-12);
  }
}

TEST(Ts3m, RejectsBadInputs) {
  Ts3mDims d = small_dims();
  d.max_tokens = 4;
  const Ts3mModel m(d, default_taxonomy().labels(), 5);
  EXPECT_THROW(m.forward(Tensor({3, 7})), DimensionError);
  EXPECT_THROW(m.forward(Tensor({5, 8})), ValidationError);
  EXPECT_THROW(Ts3mModel(d, {"a", "b"}, 1), ConfigError);
  Ts3mDims zero = d;
  zero.d_state = 0;
  EXPECT_THROW(zero.validate(), ConfigError);
}

TEST(Ts3m, InferenceMatchesTapeForward) {
  const Ts3mModel m(small_dims(), default_taxonomy().labels(), 6);
  Rng rng(4);
  const Tensor x = random_tensor(rng, {6, 8});
  Tape t;
  const auto params = m.bind_constants(t);
  const Ts3mTrace tr = ts3m_forward(t, m.dims(), params, t.constant(x));
  const Ts3mOutput out = m.forward(x);
  EXPECT_EQ(out.indicator.logits, tr.logits.value());
  const Tensor content = m.content_branch(x);
  EXPECT_EQ(content, tr.content.value());
  EXPECT_EQ(m.gate_fuse(content, tr.topic_state.value()), tr.fused.value());
}

TEST(Ts3m, DropoutOnlyInTraining) {
  const Ts3mModel m(small_dims(), default_taxonomy().labels(), 6);
  Rng data(5), drop_rng(9);
  const Tensor x = random_tensor(data, {6, 8});
  Tape t1, t2;
  const Dropout dropout{0.5, &drop_rng};
  const Tensor eval = ts3m_forward(t1, m.dims(), m.bind_constants(t1), t1.constant(x)).logits.value();
  const Tensor train = ts3m_forward(t2, m.dims(), m.bind_constants(t2), t2.constant(x), &dropout).logits.value();
  EXPECT_EQ(eval, m.forward(x).indicator.logits);
  EXPECT_NE(eval, train);
}

TEST(Ts3m, HierarchyFactor) {
  for (std::size_t d = 0; d < 6; ++d) {
    const double f = hierarchy_factor(d, HierarchyWeight::kExpNegDistance);
    EXPECT_GT(f, 0.0);
    EXPECT_LE(f, 1.0);
    EXPECT_EQ(f == 1.0, d == 0);
    EXPECT_DOUBLE_EQ(f, std::exp(-static_cast<double>(d)));
    EXPECT_DOUBLE_EQ(hierarchy_factor(d, HierarchyWeight::kOnePlusDistance), 1.0 + d);
  }
}

TEST(Ts3m, LossThScalesCrossEntropyByDistance) {
  const TopicGraph g = default_taxonomy();
  const auto& labels = g.labels();
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = random_tensor(rng, {1, 5}, 3.0);
    const std::size_t truth = rng.below(5);
    const TopicIndicator ind = make_indicator(logits, labels);
    const double ce = plain_cross_entropy(logits, truth);
    const double factor = std::exp(-static_cast<double>(g.distance(labels[truth], labels[ind.predicted])));
    const double l = loss_th(logits, labels[truth], g, labels);
    EXPECT_NEAR(l, factor * ce, 1e-12);
    EXPECT_EQ(ind.predicted == truth, std::abs(l - ce) < 1e-15);
  }
  EXPECT_THROW(loss_th(Tensor({1, 5}), "nope", g, labels), ValidationError);
}

TEST(Ts3m, NspLoss) {
  EXPECT_NEAR(loss_nsp(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_nsp(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_NEAR(loss_nsp(1.0, 0), -std::log(kProbClamp), 1e-9);
}

class Ts3mFullGradient : public ::testing::TestWithParam<int> {};

TEST_P(Ts3mFullGradient, MatchesCentralDifferences) {
  const TopicGraph g = default_taxonomy();
  // Draw until a configuration is kink-free; about 60% are.
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto c = topicrag::testing::ts3m_grad_case(1000 * static_cast<std::uint64_t>(GetParam()) + s, g);
    if (!c) continue;
    EXPECT_LT(c->result.max_relative_error, 1e-4)
        << "input " << c->result.worst_input << " index " << c->result.worst_index << " analytic "
        << c->result.analytic << " numeric " << c->result.numeric;
    return;
  }
  FAIL() << "no kink-free configuration drawn";
}

INSTANTIATE_TEST_SUITE_P(Seeds, Ts3mFullGradient, ::testing::Range(0, 6));

TEST(Ts3m, CheckpointRoundTrip) {
  const Ts3mModel m(small_dims(), default_taxonomy().labels(), 11);
  const auto dir = topicrag::testing::temp_dir("ts3m_ckpt");
  m.save(dir / "model.json", "abc123");
  const Ts3mModel back = Ts3mModel::load(dir / "model.json");
  EXPECT_EQ(back.dims(), m.dims());
  EXPECT_EQ(back.labels(), m.labels());
  for (std::size_t i = 0; i < kTs3mParamCount; ++i) EXPECT_EQ(back.params()[i].value, m.params()[i].value);
  Rng rng(1);
  const Tensor x = random_tensor(rng, {5, 8});
  EXPECT_EQ(back.forward(x).augmented, m.forward(x).augmented);
}

TEST(Ts3m, CheckpointRejectsDamage) {
  const Ts3mModel m(small_dims(), default_taxonomy().labels(), 11);
  Json j = m.to_json();
  j["params"]["w1"]["shape"] = {2, 2};
  EXPECT_THROW(Ts3mModel::from_json(j), ValidationError);
  Json k = m.to_json();
  k["params"].erase("b_o");
  EXPECT_THROW(Ts3mModel::from_json(k), ValidationError);
  Json f = m.to_json();
  f["format"] = "other";
  EXPECT_THROW(Ts3mModel::from_json(f), ValidationError);
  EXPECT_THROW(Ts3mModel::load("/nonexistent/model.json"), IoError);
}

TEST(Ts3m, TokenEncoder) {
  TokenEncoder enc(8, 3);
  const Tensor a = enc.encode("food safety rules matter");
  EXPECT_EQ(a.shape(), (std::vector<std::size_t>{3, 8}));
  TokenEncoder enc2(8, 3);
  EXPECT_EQ(enc2.encode("food safety rules matter"), a);
  EXPECT_THROW(enc.encode("  "), ValidationError);
  double norm = 0.0;
  for (std::size_t c = 0; c < 8; ++c) norm += a.at(0, c) * a.at(0, c);
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(Ts3m, TrainConfigValidation) {
  TrainConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"hierarchy_weight", "square"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"schedule", "step"}}), ConfigError);
  const TrainConfig d = TrainConfig::from_json({{"lr", 0.01}, {"hierarchy_weight", "one_plus"}});
  EXPECT_EQ(d.lr, 0.01);
  EXPECT_EQ(d.hierarchy_weight, HierarchyWeight::kOnePlusDistance);
  EXPECT_EQ(TrainConfig::from_json(d.to_json()).to_json(), d.to_json());
}

TEST(Ts3m, TrainingRejectsBadData) {
  const TopicGraph g = default_taxonomy();
  EXPECT_THROW(train_ts3m({}, g, small_dims(), TrainConfig{}), ValidationError);
  auto samples = topicrag::testing::separable_topic_samples(g, 5, 1);
  samples[2].topic.reset();
  EXPECT_THROW(train_ts3m(samples, g, small_dims(), TrainConfig{}), ValidationError);
  samples[2].topic = "taste";
  EXPECT_THROW(train_ts3m(samples, g, small_dims(), TrainConfig{}), ValidationError);
  Ts3mDims six = small_dims();
  six.topics = 6;
  EXPECT_THROW(train_ts3m(topicrag::testing::separable_topic_samples(g, 5, 1), g, six, TrainConfig{}), ConfigError);
}

TEST(Ts3m, TrainingIsDeterministicAndLogsEveryStep) {
  const TopicGraph g = default_taxonomy();
  const auto samples = topicrag::testing::separable_topic_samples(g, 40, 2);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const TrainResult a = train_ts3m(samples, g, small_dims(), cfg);
  const TrainResult b = train_ts3m(samples, g, small_dims(), cfg);
  ASSERT_EQ(a.log.size(), 10u);
  EXPECT_EQ(a.epochs_run, 2u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].to_json(), b.log[i].to_json());
    EXPECT_TRUE(std::isfinite(a.log[i].l_total));
    EXPECT_NEAR(a.log[i].l_total, cfg.lambda1 * a.log[i].l_nsp + a.log[i].lambda2 * a.log[i].l_th, 1e-9);
  }
  EXPECT_NEAR(a.log.front().lambda2, 0.1, 1e-12);
  EXPECT_NEAR(a.log.back().lambda2, 1.0, 1e-12);
  EXPECT_NEAR(a.log.front().lr, 1e-3, 1e-15);
  for (std::size_t i = 0; i < kTs3mParamCount; ++i) EXPECT_EQ(a.model.params()[i].value, b.model.params()[i].value);
  const Json rec = a.log[0].to_json();
  for (const char* key : {"step", "L_NSP", "L_TH", "L_Total", "lr", "lambda2"}) EXPECT_TRUE(rec.contains(key)) << key;
}

TEST(Ts3m, TrainingReducesTopicLoss) {
  const TopicGraph g = default_taxonomy();
  const auto samples = topicrag::testing::separable_topic_samples(g, 100, 3);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 20;
  const TrainResult r = train_ts3m(samples, g, small_dims(), cfg);
  const std::size_t per_epoch = 7;
  ASSERT_EQ(r.log.size(), per_epoch * cfg.epochs);
  auto epoch_mean = [&](std::size_t e) {
    double total = 0.0;
    for (std::size_t i = 0; i < per_epoch; ++i) total += r.log[e * per_epoch + i].l_th;
    return total / per_epoch;
  };
  EXPECT_LT(epoch_mean(cfg.epochs - 1), 0.8 * epoch_mean(0));
  TokenEncoder enc(small_dims().d_model);
  EXPECT_DOUBLE_EQ(topic_accuracy(r.model, samples, enc), r.train_accuracy);
}

TEST(Ts3m, EpochCallbackStopsEarly) {
  const TopicGraph g = default_taxonomy();
  const auto samples = topicrag::testing::separable_topic_samples(g, 20, 4);
  TrainConfig cfg;
  cfg.epochs = 10;
  std::size_t calls = 0;
  const TrainResult r = train_ts3m(samples, g, small_dims(), cfg, [&](std::size_t epoch, const Ts3mModel&) {
    ++calls;
    return epoch >= 2;
  });
  EXPECT_EQ(r.epochs_run, 3u);
  EXPECT_EQ(calls, 3u);
}
