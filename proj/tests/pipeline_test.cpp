#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "emovad/gradcheck.hpp"
#include "emovad/pipeline.hpp"
#include "test_util.hpp"

using namespace emovad;
using namespace emovad::grad;
using namespace emovad::pipeline;
using emovad::testing::random_tensor;

namespace {

constexpr std::size_t kD = 8;

PipelineParams<double> params(std::uint64_t seed) { return make_params(nn::init_params(seed, kD)).cast<double>(); }

Tensor<double> stack(std::mt19937_64& rng, std::size_t T) { return random_tensor(rng, {nn::kNumLayers, T, kD}); }

Tensor<double> emotion(Graph<double>&, const PipelineTrace<double>& tr) { return tr.emotion.value(); }

// Final VAD layer replaced by a constant decision with margin 60.
void force_vad(PipelineParams<double>& p, bool speech) {
  for (auto& v : p.vad.fc_w.storage()) v = 0.0;
  p.vad.fc_b[nn::kSpeech] = speech ? 30.0 : -30.0;
  p.vad.fc_b[nn::kNonSpeech] = speech ? -30.0 : 30.0;
}

bool all_zero(std::span<const double> xs) {
  for (double x : xs)
    if (x != 0.0) return false;
  return true;
}

}  // namespace

TEST(Conditions, NamesRoundTrip) {
  for (auto c : {Condition::kSerOnly, Condition::kCascade, Condition::kFtVad, Condition::kFtSer, Condition::kFtBoth})
    EXPECT_EQ(parse_condition(condition_name(c)), c);
  EXPECT_THROW(parse_condition("marblenet"), ConfigError);
  EXPECT_FALSE(has_vad_stage(Condition::kSerOnly));
  EXPECT_TRUE(has_vad_stage(Condition::kCascade));
  EXPECT_FALSE(is_finetune(Condition::kCascade));
  EXPECT_TRUE(is_finetune(Condition::kFtSer));
}

TEST(TrainableGroups, ConditionMatrix) {
  using G = Group;
  EXPECT_EQ(trainable_groups(Condition::kSerOnly), (GroupSet{G::kFeatSer, G::kSer}));
  EXPECT_TRUE(trainable_groups(Condition::kCascade).empty());
  EXPECT_EQ(trainable_groups(Condition::kFtVad), (GroupSet{G::kFeatVad, G::kFeatSer, G::kVad}));
  EXPECT_EQ(trainable_groups(Condition::kFtSer), (GroupSet{G::kFeatVad, G::kFeatSer, G::kSer}));
  EXPECT_EQ(trainable_groups(Condition::kFtBoth), (GroupSet{G::kFeatVad, G::kFeatSer, G::kVad, G::kSer}));
}

TEST(PipelineParams, SetTrainableTogglesGradients) {
  auto p = params(1);
  p.set_trainable({Group::kFeatVad, Group::kVad});
  EXPECT_EQ(p.frozen, (GroupSet{Group::kFeatSer, Group::kSer}));
  p.visit([&](Group g, const std::string& name, Tensor<double>& t) {
    EXPECT_EQ(t.requires_grad(), g == Group::kFeatVad || g == Group::kVad) << name;
  });
}

TEST(PipelineParams, EveryTensorBelongsToOneGroup) {
  auto p = params(2);
  std::set<std::string> names;
  std::size_t n = 0;
  p.visit([&](Group g, const std::string& name, Tensor<double>&) {
    ++n;
    names.insert(name);
    EXPECT_EQ(name.rfind(std::string(group_name(g)) + "/", 0), 0u) << name;
  });
  EXPECT_EQ(names.size(), n);
}

TEST(Forward, SerOnlyIgnoresVadParams) {
  std::mt19937_64 rng(3);
  auto p = params(3);
  auto x = stack(rng, 12);
  Graph<double> g1;
  auto a = emotion(g1, forward(g1, x, p, Condition::kSerOnly, std::nullopt));
  for (auto& w : p.vad.conv_w) w[0] += 1.0;
  for (auto& v : p.feat_vad.logits.storage()) v = 3.0;
  Graph<double> g2;
  auto b = emotion(g2, forward(g2, x, p, Condition::kSerOnly, std::nullopt));
  EXPECT_TRUE(a.same_data(b));
}

TEST(Forward, CascadeWithAllSpeechEqualsSerOnly) {
  std::mt19937_64 rng(4);
  auto p = params(4);
  force_vad(p, true);
  auto x = stack(rng, 14);
  Graph<double> g1, g2;
  auto cascade = forward(g1, x, p, Condition::kCascade, MaskMode::kHard);
  auto ser = forward(g2, x, p, Condition::kSerOnly, std::nullopt);
  EXPECT_TRUE(cascade.emotion.value().same_data(ser.emotion.value()));
  for (auto m : cascade.vad->hard) EXPECT_EQ(m, 1);
}

TEST(Forward, SaturatedVadMakesSoftAndHardAgree) {
  std::mt19937_64 rng(5);
  for (bool speech : {true, false}) {
    auto p = params(5);
    force_vad(p, speech);
    auto x = stack(rng, 10);
    Graph<double> g1, g2;
    auto hard = forward(g1, x, p, Condition::kFtBoth, MaskMode::kHard).output();
    auto soft = forward(g2, x, p, Condition::kFtBoth, MaskMode::kSoft).output();
    EXPECT_TRUE(soft.soft_mask_used);
    EXPECT_FALSE(hard.soft_mask_used);
    for (std::size_t k = 0; k < nn::kNumEmotions; ++k)
      EXPECT_NEAR(hard.emotion_probs[k], soft.emotion_probs[k], 1e-4);
  }
}

TEST(Forward, MaskModeMustMatchTopology) {
  std::mt19937_64 rng(6);
  auto p = params(6);
  auto x = stack(rng, 6);
  Graph<double> g;
  EXPECT_THROW(forward(g, x, p, Condition::kSerOnly, MaskMode::kHard), ConfigError);
  EXPECT_THROW(forward(g, x, p, Condition::kCascade, std::nullopt), ConfigError);
}

TEST(Forward, OutputConsistentWithTieBreak) {
  std::mt19937_64 rng(7);
  auto p = params(7);
  Graph<double> g;
  auto out = forward(g, stack(rng, 16), p, Condition::kFtBoth, MaskMode::kHard).output();
  ASSERT_EQ(out.hard_mask.size(), 16u);
  double total = 0;
  for (float v : out.emotion_probs) total += v;
  EXPECT_NEAR(total, 1.0, 1e-6);
  for (std::size_t t = 0; t < 16; ++t)
    EXPECT_EQ(out.hard_mask[t], out.vad_probs.at(t, nn::kSpeech) > out.vad_probs.at(t, nn::kNonSpeech) ? 1 : 0);
}

TEST(Forward, InferMatchesHardForward) {
  std::mt19937_64 rng(8);
  auto pf = make_params(nn::init_params(8, kD));
  nn::FeatureStack s{random_tensor<float>(rng, {nn::kNumLayers, 20, kD})};
  for (auto c : {Condition::kSerOnly, Condition::kCascade, Condition::kFtBoth}) {
    auto a = infer(s, pf, c);
    Graph<float> g;
    auto b = forward(g, s.layers, pf, c, has_vad_stage(c) ? std::optional(MaskMode::kHard) : std::nullopt).output();
    EXPECT_EQ(a.emotion_probs, b.emotion_probs);
    EXPECT_EQ(a.hard_mask, b.hard_mask);
    EXPECT_EQ(a.vad_probs.empty(), c == Condition::kSerOnly);
  }
}

TEST(SerLoss, UniformPosteriorsGiveLnFour) {
  std::mt19937_64 rng(9);
  auto p = params(9);
  for (auto& v : p.ser.out_w.storage()) v = 0.0;
  Graph<double> g;
  auto tr = forward(g, stack(rng, 8), p, Condition::kCascade, MaskMode::kSoft);
  for (int label = 0; label < 4; ++label) EXPECT_NEAR(ser_loss(tr, label).value()[0], std::log(4.0), 1e-12);
}

class MaskGradient : public ::testing::TestWithParam<int> {};

TEST_P(MaskGradient, HardBlocksSoftPasses) {
  std::mt19937_64 rng(100 + GetParam());
  auto p = params(100 + GetParam());
  p.set_trainable({Group::kFeatVad, Group::kFeatSer, Group::kVad, Group::kSer});
  auto x = stack(rng, 12);
  const int label = GetParam() % 4;

  auto vad_grads_zero = [&](MaskMode mode) {
    p.zero_grad();
    Graph<double> g;
    g.backward(ser_loss(forward(g, x, p, Condition::kFtBoth, mode), label));
    bool zero = all_zero(p.feat_vad.logits.grad());
    p.vad.visit([&](const std::string&, Tensor<double>& t) { zero = zero && all_zero(t.grad()); });
    // A hard mask may silence every frame, so only soft mode must reach ser.
    if (mode == MaskMode::kSoft) EXPECT_FALSE(all_zero(p.ser.out_w.grad()));
    return zero;
  };
  EXPECT_TRUE(vad_grads_zero(MaskMode::kHard));
  EXPECT_FALSE(vad_grads_zero(MaskMode::kSoft));
}

INSTANTIATE_TEST_SUITE_P(Seeds, MaskGradient, ::testing::Range(0, 20));

TEST(SoftMask, VadGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto p = params(11);
  auto x = stack(rng, 10);
  std::vector<Tensor<double>*> inputs{&p.feat_vad.logits};
  p.vad.visit([&](const std::string&, Tensor<double>& t) { inputs.push_back(&t); });
  GradCheckOptions o;
  o.step = 1e-6;
  o.max_coords_per_input = 24;
  auto r = grad_check(
      [&](Graph<double>& g) { return ser_loss(forward(g, x, p, Condition::kFtBoth, MaskMode::kSoft), 2); }, inputs, o);
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst;
}

TEST(SharedFeaturizer, AveragesLogitsAndFeedsBothBranches) {
  std::mt19937_64 rng(12);
  auto p = params(12);
  for (std::size_t l = 0; l < nn::kNumLayers; ++l) {
    p.feat_vad.logits[l] = double(l);
    p.feat_ser.logits[l] = -double(l) + 2.0;
  }
  p.share_featurizers();
  for (std::size_t l = 0; l < nn::kNumLayers; ++l) EXPECT_EQ(p.feat_vad.logits[l], 1.0);
  EXPECT_EQ(&p.ser_featurizer(), &p.feat_vad);

  auto x = stack(rng, 9);
  Graph<double> g1;
  auto a = forward(g1, x, p, Condition::kFtBoth, MaskMode::kSoft).emotion.value();
  p.feat_ser.logits[0] = 40.0;  // unused once shared
  Graph<double> g2;
  auto b = forward(g2, x, p, Condition::kFtBoth, MaskMode::kSoft).emotion.value();
  EXPECT_TRUE(a.same_data(b));
}
