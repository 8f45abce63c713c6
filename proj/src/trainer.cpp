#include "emovad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "emovad/fpenv.hpp"
#include "emovad/metrics.hpp"
#include "emovad/ops.hpp"
#include "emovad/rng.hpp"

namespace emovad::train {

using json = nlohmann::ordered_json;
using grad::Graph;
using grad::Tensor;
using pipeline::Group;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (!(featurizer_lr_scale >= 0.0) || !std::isfinite(featurizer_lr_scale))
    fail("featurizer_lr_scale must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0,1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"featurizer_lr_scale", c.featurizer_lr_scale},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"epsilon", c.epsilon}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "featurizer_lr_scale") c.featurizer_lr_scale = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (k == "patience") c.patience = v.get<std::size_t>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "epsilon") c.epsilon = v.get<double>();
      else throw ConfigError("train config: unknown key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config: bad value for '" + k + "': " + e.what());
    }
  }
}

void adam_step(PipelineParams<float>& params, AdamState& state, const TrainConfig& cfg) {
  params.visit([&](Group g, const std::string& name, Tensor<float>& t) {
    if (params.frozen.count(g) || !t.has_grad()) return;
    for (float v : t.grad())
      if (!std::isfinite(v))
        throw NumericError("non-finite gradient in parameter group '" + std::string(pipeline::group_name(g)) +
                           "' (" + name + ")");
  });

  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.t));
  const double c2 = 1.0 - std::pow(b2, double(state.t));
  params.visit([&](Group g, const std::string& name, Tensor<float>& t) {
    if (params.frozen.count(g) || !t.has_grad()) return;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(t.size(), 0.0f);
      v.assign(t.size(), 0.0f);
    }
    const bool featurizer = g == Group::kFeatVad || g == Group::kFeatSer;
    const double lr = cfg.learning_rate * (featurizer ? cfg.featurizer_lr_scale : 1.0);
    auto grad = t.grad();
    auto data = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gi = grad[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  });
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kPretrainVad: return "pretrain-vad";
    case Phase::kPretrainSer: return "pretrain-ser";
    case Phase::kFinetune: return "finetune";
  }
  return "?";
}

Phase parse_phase(std::string_view s) {
  if (s == "pretrain-vad") return Phase::kPretrainVad;
  if (s == "pretrain-ser") return Phase::kPretrainSer;
  if (s == "finetune") return Phase::kFinetune;
  throw ConfigError("unknown phase '" + std::string(s) + "'");
}

namespace {

const char* metric_name(Phase p) { return p == Phase::kPretrainVad ? "frame_accuracy" : "ua"; }

json group_list(const GroupSet& s) {
  json out = json::array();
  for (auto g : s) out.push_back(pipeline::group_name(g));
  return out;
}

std::vector<int> frame_targets(const corpus::Utterance& u) {
  if (u.frame_labels.size() != u.num_frames()) throw InputError(u.id + ": VAD training needs frame labels");
  return {u.frame_labels.begin(), u.frame_labels.end()};
}

int emotion_target(const corpus::Utterance& u) {
  if (!u.emotion) throw InputError(u.id + ": SER training needs an emotion label");
  return *u.emotion;
}

TrainState make_state(Phase phase, std::optional<Condition> cond, GroupSet trainable,
                      const PipelineParams<float>& init, const Dataset& val, const TrainConfig& cfg) {
  cfg.validate();
  if (val.empty()) throw InputError(std::string(phase_name(phase)) + ": empty validation set");
  TrainState s;
  s.phase = phase;
  s.condition = cond;
  s.trainable = std::move(trainable);
  s.params = init;
  s.params.set_trainable(s.trainable);
  s.log.phase = phase;
  s.log.condition = cond;

  auto v = validate(s, s.params, val);
  s.log.epochs.push_back({0, std::nullopt, v.loss, v.metric});
  s.best = s.params;
  s.best_metric = v.metric;
  s.best_loss = v.loss;
  s.log.selected_epoch = 0;
  spdlog::info("{} epoch 0: val_loss={:.5f} {}={:.4f}", phase_name(phase), v.loss, metric_name(phase), v.metric);
  return s;
}

}  // namespace

json to_json(const TrainLog& log, const GroupSet& trainable) {
  GroupSet frozen;
  for (auto g : pipeline::kAllGroups)
    if (!trainable.count(g)) frozen.insert(g);
  json epochs = json::array();
  for (const auto& e : log.epochs)
    epochs.push_back(json{{"epoch", e.epoch},
                          {"train_loss", e.train_loss ? json(*e.train_loss) : json(nullptr)},
                          {"val_loss", e.val_loss},
                          {"val_metric", e.val_metric}});
  return json{{"phase", phase_name(log.phase)},
              {"condition", log.condition ? json(pipeline::condition_name(*log.condition)) : json(nullptr)},
              {"metric", metric_name(log.phase)},
              {"trainable", group_list(trainable)},
              {"frozen", group_list(frozen)},
              {"epochs", epochs},
              {"selected_epoch", log.selected_epoch},
              {"stopped_early", log.stopped_early}};
}

double utterance_loss(const TrainState& state, PipelineParams<float>& params, const corpus::Utterance& u,
                      const TrainConfig& cfg, std::optional<float> backward_weight) {
  Graph<float> g;
  grad::Var<float> loss;
  switch (state.phase) {
    case Phase::kPretrainVad: {
      auto targets = frame_targets(u);
      auto x = g.constant(u.stack.layers);
      auto vad = nn::vad_forward(nn::featurizer_forward(x, params.feat_vad), params.vad);
      loss = grad::cross_entropy(vad.probs, targets);
      break;
    }
    case Phase::kPretrainSer: {
      auto trace = pipeline::forward(g, u.stack.layers, params, Condition::kSerOnly, std::nullopt);
      loss = pipeline::ser_loss(trace, emotion_target(u));
      break;
    }
    case Phase::kFinetune: {
      auto trace = pipeline::forward(g, u.stack.layers, params, *state.condition, cfg.mask_mode);
      loss = pipeline::ser_loss(trace, emotion_target(u));
      break;
    }
  }
  if (backward_weight) g.backward(loss, *backward_weight);
  return loss.value()[0];
}

Validation validate(const TrainState& state, const PipelineParams<float>& params, const Dataset& val) {
  DenormalGuard fp;
  auto& p = const_cast<PipelineParams<float>&>(params);  // forward only; nothing is written
  double loss = 0.0;
  if (state.phase == Phase::kPretrainVad) {
    metrics::VadTally tally;
    for (const auto* u : val) {
      auto targets = frame_targets(*u);
      Graph<float> g;
      auto x = g.constant(u->stack.layers);
      auto vad = nn::vad_forward(nn::featurizer_forward(x, p.feat_vad), p.vad);
      loss += grad::cross_entropy(vad.probs, targets).value()[0];
      tally.add(vad.hard, u->frame_labels);
    }
    return {tally.finish().accuracy, loss / double(val.size())};
  }
  std::vector<int> preds, labels;
  for (const auto* u : val) {
    Graph<float> g;
    auto cond = state.phase == Phase::kPretrainSer ? Condition::kSerOnly : *state.condition;
    std::optional<nn::MaskMode> mode;
    if (cond != Condition::kSerOnly) mode = nn::MaskMode::kHard;
    auto trace = pipeline::forward(g, u->stack.layers, p, cond, mode);
    labels.push_back(emotion_target(*u));
    loss += pipeline::ser_loss(trace, labels.back()).value()[0];
    preds.push_back(trace.output().predicted_emotion());
  }
  return {metrics::ser_metrics(preds, labels).ua, loss / double(val.size())};
}

double train_step(TrainState& state, std::span<const corpus::Utterance* const> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw InputError("empty batch");
  DenormalGuard fp;
  state.params.zero_grad();
  const float w = 1.0f / float(batch.size());
  double total = 0.0;
  for (const auto* u : batch) total += utterance_loss(state, state.params, *u, cfg, w);
  adam_step(state.params, state.adam, cfg);
  return total / double(batch.size());
}

void run(TrainState& state, const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw InputError(std::string(phase_name(state.phase)) + ": empty training set");
  if (val.empty()) throw InputError(std::string(phase_name(state.phase)) + ": empty validation set");
  state.params.set_trainable(state.trainable);

  while (!state.finished(cfg)) {
    if (state.since_best >= cfg.patience) {
      state.log.stopped_early = true;
      break;
    }
    const std::size_t epoch = state.epoch + 1;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = keyed_rng({cfg.seed, stream::kShuffle, std::uint64_t(state.phase), epoch});
    std::shuffle(order.begin(), order.end(), rng);

    double train_loss = 0.0;
    std::vector<const corpus::Utterance*> batch;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      batch.clear();
      for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j) batch.push_back(train[order[j]]);
      train_loss += train_step(state, batch, cfg) * double(batch.size());
    }
    train_loss /= double(train.size());

    auto v = validate(state, state.params, val);
    state.epoch = epoch;
    state.log.epochs.push_back({epoch, train_loss, v.loss, v.metric});
    const bool better = v.metric > state.best_metric || (v.metric == state.best_metric && v.loss < state.best_loss);
    if (better) {
      state.best = state.params;
      state.best_metric = v.metric;
      state.best_loss = v.loss;
      state.log.selected_epoch = epoch;
      state.since_best = 0;
    } else {
      ++state.since_best;
    }
    spdlog::info("{} epoch {}: train_loss={:.5f} val_loss={:.5f} {}={:.4f}{}", phase_name(state.phase), epoch,
                 train_loss, v.loss, metric_name(state.phase), v.metric, better ? " *" : "");
  }
}

TrainState start_pretrain_vad(const PipelineParams<float>& init, const Dataset& val, const TrainConfig& cfg) {
  return make_state(Phase::kPretrainVad, std::nullopt, {Group::kFeatVad, Group::kVad}, init, val, cfg);
}

TrainState start_pretrain_ser(const PipelineParams<float>& init, const Dataset& val, const TrainConfig& cfg) {
  return make_state(Phase::kPretrainSer, std::nullopt, {Group::kFeatSer, Group::kSer}, init, val, cfg);
}

TrainState start_finetune(const PipelineParams<float>& init, Condition cond, const Dataset& val,
                          const TrainConfig& cfg) {
  if (!pipeline::is_finetune(cond))
    throw ConfigError("fine-tuning needs ft-vad, ft-ser or ft-both, got " +
                      std::string(pipeline::condition_name(cond)));
  PipelineParams<float> p = init;
  auto groups = pipeline::trainable_groups(cond);
  if (cfg.shared_featurizer && !p.shared_featurizer) p.share_featurizers();
  if (p.shared_featurizer) groups.erase(Group::kFeatSer);
  return make_state(Phase::kFinetune, cond, groups, p, val, cfg);
}

TrainState pretrain_vad(const Dataset& train, const Dataset& val, const PipelineParams<float>& init,
                        const TrainConfig& cfg) {
  if (train.empty()) throw InputError("pretrain-vad: empty training set");
  auto s = start_pretrain_vad(init, val, cfg);
  run(s, train, val, cfg);
  return s;
}

TrainState pretrain_ser(const Dataset& train, const Dataset& val, const PipelineParams<float>& init,
                        const TrainConfig& cfg) {
  if (train.empty()) throw InputError("pretrain-ser: empty training set");
  auto s = start_pretrain_ser(init, val, cfg);
  run(s, train, val, cfg);
  return s;
}

TrainState finetune(const Dataset& train, const Dataset& val, Condition cond, const PipelineParams<float>& init,
                    const TrainConfig& cfg) {
  if (train.empty()) throw InputError("finetune: empty training set");
  auto s = start_finetune(init, cond, val, cfg);
  run(s, train, val, cfg);
  return s;
}

PipelineParams<float> combine_pretrained(const PipelineParams<float>& vad_run, const PipelineParams<float>& ser_run) {
  PipelineParams<float> p;
  p.feat_vad = vad_run.feat_vad;
  p.vad = vad_run.vad;
  p.feat_ser = ser_run.feat_ser;
  p.ser = ser_run.ser;
  p.set_trainable({});
  return p;
}

Dataset view(const std::vector<corpus::Utterance>& utts, std::optional<corpus::Split> split) {
  Dataset out;
  for (const auto& u : utts)
    if (!split || u.split == *split) out.push_back(&u);
  return out;
}

}  // namespace emovad::train
