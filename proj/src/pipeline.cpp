#include "emovad/pipeline.hpp"

#include "emovad/fpenv.hpp"
#include "emovad/ops.hpp"

namespace emovad::pipeline {

using grad::Graph;
using grad::Tensor;
using grad::Var;

std::string_view condition_name(Condition c) {
  switch (c) {
    case Condition::kSerOnly: return "ser-only";
    case Condition::kCascade: return "cascade";
    case Condition::kFtVad: return "ft-vad";
    case Condition::kFtSer: return "ft-ser";
    case Condition::kFtBoth: return "ft-both";
  }
  return "?";
}

Condition parse_condition(std::string_view s) {
  for (auto c : {Condition::kSerOnly, Condition::kCascade, Condition::kFtVad, Condition::kFtSer, Condition::kFtBoth})
    if (condition_name(c) == s) return c;
  throw ConfigError("unknown condition '" + std::string(s) + "' (expected ser-only|cascade|ft-vad|ft-ser|ft-both)");
}

bool has_vad_stage(Condition c) { return c != Condition::kSerOnly; }

bool is_finetune(Condition c) {
  return c == Condition::kFtVad || c == Condition::kFtSer || c == Condition::kFtBoth;
}

std::string_view group_name(Group g) {
  switch (g) {
    case Group::kFeatVad: return "feat_vad";
    case Group::kFeatSer: return "feat_ser";
    case Group::kVad: return "vad";
    case Group::kSer: return "ser";
  }
  return "?";
}

Group parse_group(std::string_view s) {
  for (auto g : kAllGroups)
    if (group_name(g) == s) return g;
  throw ConfigError("unknown parameter group '" + std::string(s) + "'");
}

GroupSet trainable_groups(Condition c) {
  switch (c) {
    case Condition::kSerOnly: return {Group::kFeatSer, Group::kSer};
    case Condition::kCascade: return {};
    case Condition::kFtVad: return {Group::kFeatVad, Group::kFeatSer, Group::kVad};
    case Condition::kFtSer: return {Group::kFeatVad, Group::kFeatSer, Group::kSer};
    case Condition::kFtBoth: return {Group::kFeatVad, Group::kFeatSer, Group::kVad, Group::kSer};
  }
  return {};
}

template <typename T>
void PipelineParams<T>::set_trainable(const GroupSet& groups) {
  frozen.clear();
  for (auto g : kAllGroups)
    if (!groups.count(g)) frozen.insert(g);
  visit([&](Group g, const std::string&, Tensor<T>& t) { t.set_requires_grad(!frozen.count(g)); });
}

template <typename T>
void PipelineParams<T>::zero_grad() {
  visit([](Group, const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

template <typename T>
void PipelineParams<T>::share_featurizers() {
  if (shared_featurizer) return;
  for (std::size_t i = 0; i < nn::kNumLayers; ++i)
    feat_vad.logits[i] = (feat_vad.logits[i] + feat_ser.logits[i]) / T(2);
  shared_featurizer = true;
}

PipelineParams<float> make_params(nn::InitialParams init) {
  PipelineParams<float> p;
  p.feat_vad = std::move(init.feat_vad);
  p.feat_ser = std::move(init.feat_ser);
  p.vad = std::move(init.vad);
  p.ser = std::move(init.ser);
  return p;
}

int PipelineOutput::predicted_emotion() const {
  int best = 0;
  for (int k = 1; k < static_cast<int>(nn::kNumEmotions); ++k)
    if (emotion_probs[k] > emotion_probs[best]) best = k;
  return best;
}

template <typename T>
PipelineOutput PipelineTrace<T>::output() const {
  PipelineOutput out;
  const auto& e = emotion.value();
  for (std::size_t k = 0; k < nn::kNumEmotions; ++k) out.emotion_probs[k] = static_cast<float>(e[k]);
  if (vad) {
    out.vad_probs = vad->probs.value().template cast<float>();
    out.hard_mask = vad->hard;
  }
  out.soft_mask_used = mask_mode.has_value() && *mask_mode != MaskMode::kHard;
  return out;
}

template <typename T>
PipelineTrace<T> forward(Graph<T>& g, const Tensor<T>& stack, PipelineParams<T>& p, Condition cond,
                         std::optional<MaskMode> mask_mode) {
  PipelineTrace<T> trace;
  auto x = g.constant(stack);
  if (cond == Condition::kSerOnly) {
    if (mask_mode) throw ConfigError("condition ser-only has no VAD stage; mask mode must not be set");
    trace.emotion = nn::ser_forward(nn::featurizer_forward(x, p.ser_featurizer()), p.ser);
    return trace;
  }
  if (!mask_mode) throw ConfigError("condition " + std::string(condition_name(cond)) + " requires a mask mode");
  auto f_vad = nn::featurizer_forward(x, p.vad_featurizer());
  auto f_ser = p.shared_featurizer ? f_vad : nn::featurizer_forward(x, p.ser_featurizer());
  trace.vad = nn::vad_forward(f_vad, p.vad);
  trace.mask_mode = mask_mode;
  auto masked = nn::apply_mask(f_ser, nn::make_mask(*trace.vad, *mask_mode));
  trace.emotion = nn::ser_forward(masked, p.ser);
  return trace;
}

template <typename T>
Var<T> ser_loss(const PipelineTrace<T>& trace, int label) {
  const int labels[1] = {label};
  return grad::cross_entropy(trace.emotion, std::span<const int>(labels));
}

PipelineOutput infer(const nn::FeatureStack& stack, const PipelineParams<float>& p, Condition cond) {
  // No backward pass runs on this graph, so the bound tensors are only read.
  auto& params = const_cast<PipelineParams<float>&>(p);
  DenormalGuard fp;
  Graph<float> g;
  auto trace = forward(g, stack.layers, params, cond,
                       has_vad_stage(cond) ? std::optional<MaskMode>(MaskMode::kHard) : std::nullopt);
  return trace.output();
}

#define EMOVAD_INSTANTIATE_PIPELINE(T)                                                               \
  template struct PipelineParams<T>;                                                                 \
  template struct PipelineTrace<T>;                                                                  \
  template PipelineTrace<T> forward(Graph<T>&, const Tensor<T>&, PipelineParams<T>&, Condition,      \
                                    std::optional<MaskMode>);                                        \
  template Var<T> ser_loss(const PipelineTrace<T>&, int);

EMOVAD_INSTANTIATE_PIPELINE(float)
EMOVAD_INSTANTIATE_PIPELINE(double)

}  // namespace emovad::pipeline
