#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

#include "emovad/checkpoint.hpp"
#include "emovad/trainer.hpp"

using namespace emovad;
using namespace emovad::train;
using emovad::pipeline::Group;

namespace {

struct Quiet {
  Quiet() { spdlog::set_level(spdlog::level::err); }
} quiet;

corpus::SynthSpec tiny_spec(std::uint64_t seed) {
  corpus::SynthSpec s;
  s.n_train = 16;
  s.n_val = 8;
  s.n_test = 0;
  s.t_min = 40;
  s.t_max = 80;
  s.seed = seed;
  return s;
}

struct Fixture {
  std::vector<corpus::Utterance> utts;
  Dataset train, val;
  PipelineParams<float> init;

  explicit Fixture(std::uint64_t seed) : utts(corpus::generate_corpus(tiny_spec(seed))) {
    train = view(utts, corpus::Split::kTrain);
    val = view(utts, corpus::Split::kVal);
    init = pipeline::make_params(nn::init_params(seed, 32));
  }
};

TrainConfig fast(std::size_t epochs, double lr = 1e-3) {
  TrainConfig c;
  c.learning_rate = lr;
  c.max_epochs = epochs;
  c.patience = 100;
  return c;
}

std::map<Group, std::vector<float>> snapshot(const PipelineParams<float>& p) {
  std::map<Group, std::vector<float>> out;
  p.visit([&](Group g, const std::string&, const grad::Tensor<float>& t) {
    out[g].insert(out[g].end(), t.storage().begin(), t.storage().end());
  });
  return out;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Every tensor trainable, grads zeroed.
PipelineParams<float> all_trainable(std::uint64_t seed) {
  auto p = pipeline::make_params(nn::init_params(seed, 8));
  p.set_trainable({Group::kFeatVad, Group::kFeatSer, Group::kVad, Group::kSer});
  return p;
}

}  // namespace

// ---------------------------------------------------------------- Adam

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = all_trainable(1);
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  p.ser.out_w[5] = 0.0f;  // keeps float rounding of the update far below tolerance
  const float before = p.ser.out_w[5];
  const auto others = snapshot(p);
  p.ser.out_w.grad()[5] = 0.5f;
  adam_step(p, st, cfg);
  EXPECT_NEAR(double(p.ser.out_w[5]) - double(before), -1e-4, 1e-9);
  EXPECT_EQ(st.t, 1u);
  // Every coordinate with zero gradient is untouched.
  p.ser.out_w[5] = before;
  EXPECT_EQ(snapshot(p), others);
}

TEST(Adam, ZeroGradientKeepsParamsButCountsStep) {
  auto p = all_trainable(2);
  AdamState st;
  const auto before = snapshot(p);
  for (int i = 0; i < 3; ++i) adam_step(p, st, TrainConfig{});
  EXPECT_EQ(snapshot(p), before);
  EXPECT_EQ(st.t, 3u);
}

TEST(Adam, ZeroLearningRateKeepsParams) {
  auto p = all_trainable(3);
  p.visit([](Group, const std::string&, grad::Tensor<float>& t) {
    for (auto& g : t.grad()) g = 0.25f;
  });
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  const auto before = snapshot(p);
  adam_step(p, st, cfg);
  EXPECT_EQ(snapshot(p), before);
}

TEST(Adam, FrozenGroupWithGradientUntouched) {
  auto p = all_trainable(4);
  p.visit([](Group, const std::string&, grad::Tensor<float>& t) {
    for (auto& g : t.grad()) g = -0.5f;
  });
  p.frozen = {Group::kVad, Group::kFeatSer};
  const auto before = snapshot(p);
  AdamState st;
  adam_step(p, st, TrainConfig{});
  auto after = snapshot(p);
  EXPECT_TRUE(same_bits(after[Group::kVad], before.at(Group::kVad)));
  EXPECT_TRUE(same_bits(after[Group::kFeatSer], before.at(Group::kFeatSer)));
  EXPECT_FALSE(same_bits(after[Group::kSer], before.at(Group::kSer)));
  EXPECT_FALSE(st.m.count("vad/fc.w"));
}

TEST(Adam, NonFiniteGradientNamesTheGroup) {
  auto p = all_trainable(5);
  p.vad.fc_b.grad()[0] = std::nanf("");
  AdamState st;
  const auto before = snapshot(p);
  try {
    adam_step(p, st, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'vad'"), std::string::npos) << e.what();
  }
  EXPECT_EQ(snapshot(p), before);
  EXPECT_EQ(st.t, 0u);
}

TEST(Adam, MomentsMirrorParameterShapes) {
  auto p = all_trainable(6);
  p.ser.head_w.grad()[0] = 1.0f;
  AdamState st;
  adam_step(p, st, TrainConfig{});
  p.visit([&](Group, const std::string& name, const grad::Tensor<float>& t) {
    ASSERT_TRUE(st.m.count(name)) << name;
    EXPECT_EQ(st.m[name].size(), t.size());
    EXPECT_EQ(st.v[name].size(), t.size());
  });
}

// ---------------------------------------------------------------- config

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.learning_rate = 3e-4;
  c.featurizer_lr_scale = 20;
  c.batch_size = 4;
  nlohmann::ordered_json j = c;
  EXPECT_FALSE(j.contains("seed"));
  TrainConfig back;
  from_json(j, back);
  EXPECT_EQ(nlohmann::ordered_json(back), j);
  EXPECT_THROW(from_json(nlohmann::ordered_json{{"lr", 1.0}}, back), ConfigError);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------- phases

TEST(Pretrain, EpochZeroLossesMatchUniformGuess) {
  Fixture f(7);
  auto vad = start_pretrain_vad(f.init, f.val, fast(1));
  auto ser = start_pretrain_ser(f.init, f.val, fast(1));
  EXPECT_NEAR(vad.log.epochs[0].val_loss, std::numbers::ln2, 0.05);
  EXPECT_NEAR(ser.log.epochs[0].val_loss, std::log(4.0), 0.05);
  EXPECT_EQ(vad.trainable, (pipeline::GroupSet{Group::kFeatVad, Group::kVad}));
  EXPECT_EQ(ser.trainable, (pipeline::GroupSet{Group::kFeatSer, Group::kSer}));
}

TEST(Pretrain, EmptyDataRejected) {
  Fixture f(8);
  Dataset none;
  EXPECT_THROW(start_pretrain_vad(f.init, none, fast(1)), InputError);
  auto st = start_pretrain_vad(f.init, f.val, fast(1));
  EXPECT_THROW(run(st, none, f.val, fast(1)), InputError);
}

TEST(Pretrain, SameSeedGivesIdenticalCheckpoints) {
  Fixture f(9);
  auto a = pretrain_vad(f.train, f.val, f.init, fast(2));
  auto b = pretrain_vad(f.train, f.val, f.init, fast(2));
  EXPECT_EQ(encode_ntar(state_to_archive(a)), encode_ntar(state_to_archive(b)));
}

TEST(Pretrain, ResumeEqualsUninterruptedRun) {
  Fixture f(10);
  auto full = pretrain_ser(f.train, f.val, f.init, fast(3));
  auto part = pretrain_ser(f.train, f.val, f.init, fast(2));
  auto restored = state_from_archive(decode_ntar(encode_ntar(state_to_archive(part))));
  EXPECT_EQ(restored.adam.t, part.adam.t);
  run(restored, f.train, f.val, fast(3));
  EXPECT_EQ(encode_ntar(state_to_archive(restored)), encode_ntar(state_to_archive(full)));
}

TEST(Pretrain, PatienceStopsEarlyAndSelectionPrefersBestEpoch) {
  Fixture f(11);
  auto cfg = fast(6, 0.0);  // nothing moves, so no epoch ever improves
  cfg.patience = 2;
  auto st = pretrain_vad(f.train, f.val, f.init, cfg);
  EXPECT_TRUE(st.log.stopped_early);
  EXPECT_EQ(st.epoch, 2u);
  EXPECT_EQ(st.log.selected_epoch, 0u);
}

TEST(Smoke, EightUtteranceTrainingLossMostlyDecreases) {
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto spec = tiny_spec(100 + seed);
    spec.n_train = 8;
    spec.n_val = 2;
    auto utts = corpus::generate_corpus(spec);
    auto train = view(utts, corpus::Split::kTrain), val = view(utts, corpus::Split::kVal);
    auto st = pretrain_vad(train, val, pipeline::make_params(nn::init_params(seed, 32)), fast(5));
    bool ok = true;
    for (std::size_t e = 2; e < st.log.epochs.size(); ++e)
      ok = ok && *st.log.epochs[e].train_loss <= *st.log.epochs[e - 1].train_loss;
    monotone += ok;
  }
  EXPECT_GE(monotone, 4);
}

// ---------------------------------------------------------------- fine-tuning

class FreezeMatrix : public ::testing::TestWithParam<Condition> {};

TEST_P(FreezeMatrix, GroupsOutsideTrainableSetStayBitIdentical) {
  Fixture f(12);
  auto cfg = fast(1);
  cfg.batch_size = 1;  // 16 steps
  const auto before = snapshot(f.init);
  auto st = finetune(f.train, f.val, GetParam(), f.init, cfg);
  EXPECT_GE(st.adam.t, 10u);
  const auto after = snapshot(st.params);
  const auto trainable = pipeline::trainable_groups(GetParam());
  for (auto g : pipeline::kAllGroups) {
    if (trainable.count(g))
      EXPECT_FALSE(same_bits(after.at(g), before.at(g))) << pipeline::group_name(g);
    else
      EXPECT_TRUE(same_bits(after.at(g), before.at(g))) << pipeline::group_name(g);
  }
}

INSTANTIATE_TEST_SUITE_P(Conditions, FreezeMatrix,
                         ::testing::Values(Condition::kFtVad, Condition::kFtSer, Condition::kFtBoth));

TEST(Finetune, RejectsNonFinetuneConditions) {
  Fixture f(13);
  EXPECT_THROW(start_finetune(f.init, Condition::kCascade, f.val, fast(1)), ConfigError);
  EXPECT_THROW(start_finetune(f.init, Condition::kSerOnly, f.val, fast(1)), ConfigError);
}

TEST(Finetune, SharedFeaturizerDropsSerFeaturizerGroup) {
  Fixture f(14);
  auto cfg = fast(1);
  cfg.shared_featurizer = true;
  auto st = start_finetune(f.init, Condition::kFtBoth, f.val, cfg);
  EXPECT_TRUE(st.params.shared_featurizer);
  EXPECT_FALSE(st.trainable.count(Group::kFeatSer));
  auto log = to_json(st.log, st.trainable);
  EXPECT_NE(log["frozen"].dump().find("feat_ser"), std::string::npos);
}

TEST(Finetune, LogRecordsFrozenVadForFtSer) {
  Fixture f(15);
  auto st = start_finetune(f.init, Condition::kFtSer, f.val, fast(1));
  auto log = to_json(st.log, st.trainable);
  EXPECT_EQ(log["condition"], "ft-ser");
  EXPECT_EQ(log["frozen"], nlohmann::ordered_json::array({"vad"}));
}

TEST(Finetune, ValidationLossDoesNotRiseOnTrainingDistribution) {
  // Pretrain briefly, then fine-tune on extended noisy copies of the same
  // utterances; the held-out loss should not end above its starting value.
  int held = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Fixture f(200 + seed);
    auto spec = tiny_spec(200 + seed);
    auto vad = pretrain_vad(f.train, f.val, f.init, fast(2));
    auto ser = pretrain_ser(f.train, f.val, f.init, fast(2));
    std::vector<corpus::Utterance> tr, va;
    for (const auto* u : f.train) tr.push_back(corpus::make_noisy_training_variant(*u, spec));
    for (const auto* u : f.val) va.push_back(corpus::make_noisy_training_variant(*u, spec));
    auto cfg = fast(2, 1e-4);
    auto st = finetune(view(tr), view(va), Condition::kFtBoth, combine_pretrained(vad.best, ser.best), cfg);
    held += st.best_loss <= st.log.epochs[0].val_loss;
  }
  EXPECT_GE(held, 4);
}

TEST(Combine, TakesEachBranchFromItsRun) {
  auto a = pipeline::make_params(nn::init_params(1, 8));
  auto b = pipeline::make_params(nn::init_params(2, 8));
  auto c = combine_pretrained(a, b);
  EXPECT_TRUE(c.vad.fc_w.same_data(a.vad.fc_w));
  EXPECT_TRUE(c.feat_vad.logits.same_data(a.feat_vad.logits));
  EXPECT_TRUE(c.ser.out_w.same_data(b.ser.out_w));
  EXPECT_TRUE(c.feat_ser.logits.same_data(b.feat_ser.logits));
}

TEST(TrainConfig, DefaultsFollowPublishedRecipe) {
  // Adam, fixed lr 1e-4, batch of 8, at most 100 epochs.
  TrainConfig c;
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.max_epochs, 100u);
  EXPECT_EQ(c.patience, 10u);
  EXPECT_EQ(c.featurizer_lr_scale, 1.0);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.999);
}
