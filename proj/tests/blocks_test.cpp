#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "emovad/blocks.hpp"
#include "emovad/gradcheck.hpp"
#include "emovad/ops.hpp"
#include "test_util.hpp"

using namespace emovad;
using namespace emovad::grad;
using namespace emovad::nn;
using emovad::testing::random_tensor;

namespace {

InitialParams small_init(std::uint64_t seed = 1, std::size_t d = 8) { return init_params(seed, d); }

}  // namespace

// ---------------------------------------------------------------- featurizer

TEST(Featurizer, DominantLogitSelectsOneLayer) {
  std::mt19937_64 rng(3);
  auto stack = random_tensor(rng, {kNumLayers, 5, 6});
  for (std::size_t j : {0u, 6u, 12u}) {
    FeaturizerParams<double> p;
    p.logits[j] = 50.0;
    Graph<double> g;
    auto f = featurizer_forward(g.constant(stack), p);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(f.value().at(t, d), stack.at(j, t, d), 1e-6);
  }
}

TEST(Featurizer, EqualLogitsGiveLayerMean) {
  std::mt19937_64 rng(4);
  auto stack = random_tensor(rng, {kNumLayers, 4, 6});
  FeaturizerParams<double> p;
  for (auto& v : p.logits.storage()) v = 2.5;
  Graph<double> g;
  auto f = featurizer_forward(g.constant(stack), p);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 6; ++d) {
      double mean = 0;
      for (std::size_t l = 0; l < kNumLayers; ++l) mean += stack.at(l, t, d);
      EXPECT_NEAR(f.value().at(t, d), mean / kNumLayers, 1e-12);
    }
}

TEST(Featurizer, MatchesTripleLoopOnRandomStacks) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto stack = random_tensor<float>(rng, {kNumLayers, 8, 6});
    FeaturizerParams<float> p;
    p.logits = random_tensor<float>(rng, {kNumLayers}, 2.0);
    auto w = p.normalized_weights();
    Graph<float> g;
    auto f = featurizer_forward(g.constant(stack), p);
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t d = 0; d < 6; ++d) {
        double acc = 0;
        for (std::size_t l = 0; l < kNumLayers; ++l) acc += w[l] * stack.at(l, t, d);
        EXPECT_NEAR(f.value().at(t, d), acc, 1e-5);
      }
  }
}

TEST(Featurizer, WrongLayerCountIsShapeError) {
  FeaturizerParams<double> p;
  Graph<double> g;
  EXPECT_THROW(featurizer_forward(g.constant(Tensor<double>({12, 4, 6})), p), ShapeError);
  FeatureStack s{Tensor<float>({12, 4, 6})};
  try {
    s.validate();
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("13"), std::string::npos);
  }
}

TEST(Featurizer, WeightsStayOnSimplexAfterGradientSteps) {
  std::mt19937_64 rng(6);
  auto stack = random_tensor(rng, {kNumLayers, 6, 4});
  FeaturizerParams<double> p;
  p.logits.set_requires_grad(true);
  for (int step = 0; step < 50; ++step) {
    p.logits.zero_grad();
    Graph<double> g;
    auto y = sum(featurizer_forward(g.constant(stack), p));
    g.backward(y);
    for (std::size_t l = 0; l < kNumLayers; ++l) p.logits[l] -= 5.0 * p.logits.grad()[l];
    double total = 0;
    for (double w : p.normalized_weights()) {
      EXPECT_GE(w, 0.0);
      total += w;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Featurizer, GradientCheck) {
  std::mt19937_64 rng(7);
  auto stack = random_tensor(rng, {kNumLayers, 5, 3});
  FeaturizerParams<double> p;
  p.logits = random_tensor(rng, {kNumLayers});
  std::vector<Tensor<double>*> inputs{&p.logits, &stack};
  auto r = grad_check([&](Graph<double>& g) { return sum(featurizer_forward(g.param(stack), p)); }, inputs);
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}

// ---------------------------------------------------------------- VAD

TEST(VadBlock, RowsOnSimplexAndMaskFollowsArgmax) {
  std::mt19937_64 rng(8);
  auto p = small_init(8).vad.cast<double>();
  for (auto& v : p.fc_b.storage()) v = 0.3;
  auto feats = random_tensor(rng, {12, 8}, 3.0);
  Graph<double> g;
  auto out = vad_forward(g.constant(feats), p);
  ASSERT_EQ(out.probs.dims(), (Dims{12, 2}));
  ASSERT_EQ(out.hard.size(), 12u);
  for (std::size_t t = 0; t < 12; ++t) {
    EXPECT_NEAR(out.probs.value().at(t, 0) + out.probs.value().at(t, 1), 1.0, 1e-6);
    EXPECT_EQ(out.hard[t], out.probs.value().at(t, kSpeech) > out.probs.value().at(t, kNonSpeech) ? 1 : 0);
  }
}

TEST(VadBlock, ZeroFinalLayerGivesTiesResolvedToNonSpeech) {
  std::mt19937_64 rng(9);
  auto p = small_init(9).vad.cast<double>();
  for (auto& v : p.fc_w.storage()) v = 0.0;
  Graph<double> g;
  auto out = vad_forward(g.constant(random_tensor(rng, {7, 8})), p);
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_DOUBLE_EQ(out.probs.value().at(t, 0), 0.5);
    EXPECT_DOUBLE_EQ(out.probs.value().at(t, 1), 0.5);
    EXPECT_EQ(out.hard[t], 0);
  }
}

TEST(VadBlock, MaskInvariantToCommonLogitShift) {
  std::mt19937_64 rng(10);
  auto p = small_init(10).vad.cast<double>();
  auto feats = random_tensor(rng, {20, 8}, 2.0);
  Graph<double> g1;
  auto a = vad_forward(g1.constant(feats), p);
  for (auto& v : p.fc_b.storage()) v += 4.0;
  Graph<double> g2;
  auto b = vad_forward(g2.constant(feats), p);
  EXPECT_EQ(a.hard, b.hard);
}

TEST(VadBlock, FrameLossGradientCheck) {
  std::mt19937_64 rng(11);
  auto p = small_init(11).vad.cast<double>();
  auto feats = random_tensor(rng, {9, 8});
  std::vector<int> labels{0, 1, 1, 0, 1, 1, 1, 0, 0};
  std::vector<Tensor<double>*> inputs{&feats};
  p.visit([&](const std::string&, Tensor<double>& t) { inputs.push_back(&t); });
  GradCheckOptions o;
  o.step = 1e-6;
  o.max_coords_per_input = 24;
  auto r = grad_check([&](Graph<double>& g) { return cross_entropy(vad_forward(g.param(feats), p).probs, labels); },
                      inputs, o);
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst;
}

// ---------------------------------------------------------------- masking

TEST(ApplyMask, OnesZerosAndHalves) {
  std::mt19937_64 rng(12);
  auto f = random_tensor(rng, {5, 4});
  Graph<double> g;
  auto fv = g.constant(f);
  auto ones = apply_mask(fv, g.constant(Tensor<double>({5, 1}, 1.0)));
  EXPECT_TRUE(ones.value().same_data(f));
  auto zeros = apply_mask(fv, g.constant(Tensor<double>({5, 1}, 0.0)));
  for (double v : zeros.value().storage()) EXPECT_EQ(v, 0.0);
  auto half = apply_mask(fv, g.constant(Tensor<double>({5, 1}, 0.5)));
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(half.value()[i], 0.5 * f[i]);
}

TEST(ApplyMask, HardZeroRowsAreExactlyZero) {
  std::mt19937_64 rng(13);
  auto f = random_tensor(rng, {6, 3});
  Tensor<double> m({6, 1}, {1, 0, 1, 0, 0, 1});
  Graph<double> g;
  auto y = apply_mask(g.constant(f), g.constant(m));
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(y.value().at(t, d), m[t] == 0 ? 0.0 : f.at(t, d));
}

TEST(ApplyMask, LengthMismatchIsShapeError) {
  Graph<double> g;
  EXPECT_THROW(apply_mask(g.constant(Tensor<double>({5, 4})), g.constant(Tensor<double>({4, 1}))), ShapeError);
}

// ---------------------------------------------------------------- attention pooling

TEST(AttentionPool, SingleFrameIsReturnedExactly) {
  std::mt19937_64 rng(14);
  auto h = random_tensor(rng, {1, 6});
  Graph<double> g;
  auto y = self_attention_pool(g.constant(h), g.constant(random_tensor(rng, {6})));
  for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(y.value()[d], h[d]);
}

TEST(AttentionPool, IdenticalFramesIgnoreQuery) {
  std::mt19937_64 rng(15);
  auto row = random_tensor(rng, {6});
  Tensor<double> h({4, 6});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 6; ++d) h.at(t, d) = row[d];
  Graph<double> g;
  auto y = self_attention_pool(g.constant(h), g.constant(random_tensor(rng, {6}, 5.0)));
  for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(y.value()[d], row[d], 1e-12);
}

TEST(AttentionPool, ClosedFormWeights) {
  // Scores <u, H[t]> = (ln 3, 0) give alpha = (3/4, 1/4).
  Tensor<double> h({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  Tensor<double> u({4}, {std::log(3.0), 0, 0, 0});
  Graph<double> g;
  auto y = self_attention_pool(g.constant(h), g.constant(u));
  EXPECT_NEAR(y.value()[0], 0.75, 1e-12);
  EXPECT_NEAR(y.value()[1], 0.25, 1e-12);
  EXPECT_EQ(y.value()[2], 0.0);
}

// ---------------------------------------------------------------- SER

TEST(SerBlock, PosteriorsOnOpenSimplex) {
  std::mt19937_64 rng(16);
  auto p = small_init(16).ser.cast<double>();
  for (std::size_t T : {2u, 3u, 17u}) {
    Graph<double> g;
    auto y = ser_forward(g.constant(random_tensor(rng, {T, 8})), p);
    ASSERT_EQ(y.value().size(), kNumEmotions);
    double total = 0;
    for (double v : y.value().storage()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(SerBlock, ZeroOutputLayerIsUniform) {
  std::mt19937_64 rng(17);
  auto p = small_init(17).ser.cast<double>();
  for (auto& v : p.out_w.storage()) v = 0.0;
  Graph<double> g;
  auto y = ser_forward(g.constant(random_tensor(rng, {10, 8})), p);
  for (double v : y.value().storage()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(SerBlock, SingleFrameIsTooShort) {
  auto p = small_init().ser.cast<double>();
  Graph<double> g;
  EXPECT_THROW(ser_forward(g.constant(Tensor<double>({1, 8})), p), ShapeError);
}

TEST(SerBlock, DeterministicAcrossGraphs) {
  std::mt19937_64 rng(18);
  auto p = small_init(18).ser;
  auto x = random_tensor<float>(rng, {15, 8});
  Graph<float> g1, g2;
  EXPECT_TRUE(ser_forward(g1.constant(x), p).value().same_data(ser_forward(g2.constant(x), p).value()));
}

TEST(SerBlock, EndToEndGradientCheckOverAllParams) {
  std::mt19937_64 rng(19);
  auto p = small_init(19).ser.cast<double>();
  auto feats = random_tensor(rng, {9, 8});
  std::vector<Tensor<double>*> inputs;
  p.visit([&](const std::string&, Tensor<double>& t) { inputs.push_back(&t); });
  GradCheckOptions o;
  o.step = 1e-6;
  o.max_coords_per_input = 16;
  const int label[] = {3};
  auto r = grad_check([&](Graph<double>& g) { return cross_entropy(ser_forward(g.constant(feats), p), label); },
                      inputs, o);
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst;
  EXPECT_GT(r.coords_checked, 100u);
}

// ---------------------------------------------------------------- init

TEST(InitParams, SameSeedBitIdenticalOtherSeedDiffers) {
  auto a = init_params(42, 8), b = init_params(42, 8), c = init_params(43, 8);
  bool all_same = true, any_diff = false;
  std::vector<const Tensor<float>*> ta, tb, tc;
  a.ser.visit([&](const std::string&, const Tensor<float>& t) { ta.push_back(&t); });
  b.ser.visit([&](const std::string&, const Tensor<float>& t) { tb.push_back(&t); });
  c.ser.visit([&](const std::string&, const Tensor<float>& t) { tc.push_back(&t); });
  a.vad.visit([&](const std::string&, const Tensor<float>& t) { ta.push_back(&t); });
  b.vad.visit([&](const std::string&, const Tensor<float>& t) { tb.push_back(&t); });
  c.vad.visit([&](const std::string&, const Tensor<float>& t) { tc.push_back(&t); });
  for (std::size_t i = 0; i < ta.size(); ++i) {
    all_same = all_same && ta[i]->same_data(*tb[i]);
    any_diff = any_diff || !ta[i]->same_data(*tc[i]);
  }
  EXPECT_TRUE(all_same);
  EXPECT_TRUE(any_diff);
}

TEST(InitParams, UniformFeaturizerZeroBiasesBoundedWeights) {
  auto p = init_params(5, 32);
  for (double w : p.feat_vad.normalized_weights()) EXPECT_NEAR(w, 1.0 / 13.0, 1e-7);
  for (double w : p.feat_ser.normalized_weights()) EXPECT_NEAR(w, 1.0 / 13.0, 1e-7);
  for (const auto& b : p.vad.conv_b)
    for (float v : b.storage()) EXPECT_EQ(v, 0.0f);
  for (float v : p.ser.out_b.storage()) EXPECT_EQ(v, 0.0f);
  // fc of the VAD head: fan_in 256, fan_out 2.
  const float a = std::sqrt(6.0f / 258.0f);
  for (float v : p.vad.fc_w.storage()) EXPECT_LE(std::abs(v), a);
  const float proj = std::sqrt(6.0f / (32.0f + 256.0f));
  for (float v : p.ser.proj_w.storage()) EXPECT_LE(std::abs(v), proj);
}

TEST(InitParams, OddOrTinyDimRejected) {
  EXPECT_THROW(init_params(1, 7), ConfigError);
  EXPECT_THROW(init_params(1, 2), ConfigError);
}
