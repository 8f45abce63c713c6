#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "emovad/blocks.hpp"

namespace emovad::pipeline {

using grad::Var;
using nn::MaskMode;

// Experimental conditions. SER_ONLY covers both the original-utterance
// reference and its evaluation on extended utterances; the two differ only in
// the test data. MarbleNet preprocessing has no representation here.
enum class Condition { kSerOnly, kCascade, kFtVad, kFtSer, kFtBoth };

std::string_view condition_name(Condition c);  // ser-only|cascade|ft-vad|ft-ser|ft-both
Condition parse_condition(std::string_view s);
bool has_vad_stage(Condition c);
bool is_finetune(Condition c);

enum class Group { kFeatVad, kFeatSer, kVad, kSer };
inline constexpr std::array<Group, 4> kAllGroups{Group::kFeatVad, Group::kFeatSer, Group::kVad, Group::kSer};
using GroupSet = std::set<Group>;

std::string_view group_name(Group g);  // feat_vad|feat_ser|vad|ser
Group parse_group(std::string_view s);

// Parameter groups updated while fine-tuning under `c`.
GroupSet trainable_groups(Condition c);

template <typename T>
struct PipelineParams {
  nn::FeaturizerParams<T> feat_vad;
  nn::FeaturizerParams<T> feat_ser;
  nn::VadParams<T> vad;
  nn::SerParams<T> ser;
  // When set, feat_vad feeds both branches and feat_ser is unused.
  bool shared_featurizer = false;
  GroupSet frozen{kAllGroups.begin(), kAllGroups.end()};

  // f(Group, "group/name", Tensor&) over every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  // Marks `groups` trainable (requires_grad on) and every other group frozen.
  void set_trainable(const GroupSet& groups);
  void zero_grad();

  // Merges the two featurizers into one initialized to the mean of their logits.
  void share_featurizers();

  nn::FeaturizerParams<T>& vad_featurizer() { return feat_vad; }
  nn::FeaturizerParams<T>& ser_featurizer() { return shared_featurizer ? feat_vad : feat_ser; }

  template <typename U>
  PipelineParams<U> cast() const {
    PipelineParams<U> out;
    out.feat_vad = feat_vad.template cast<U>();
    out.feat_ser = feat_ser.template cast<U>();
    out.vad = vad.template cast<U>();
    out.ser = ser.template cast<U>();
    out.shared_featurizer = shared_featurizer;
    out.frozen = frozen;
    return out;
  }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto tag = [&](Group g) {
      return [&f, g](const std::string& name, auto& t) { f(g, std::string(group_name(g)) + "/" + name, t); };
    };
    self.feat_vad.visit(tag(Group::kFeatVad));
    self.feat_ser.visit(tag(Group::kFeatSer));
    self.vad.visit(tag(Group::kVad));
    self.ser.visit(tag(Group::kSer));
  }
};

PipelineParams<float> make_params(nn::InitialParams init);

struct PipelineOutput {
  std::array<float, nn::kNumEmotions> emotion_probs{};
  grad::Tensor<float> vad_probs;  // [T x 2]; empty without a VAD stage
  std::vector<std::uint8_t> hard_mask;
  bool soft_mask_used = false;

  int predicted_emotion() const;  // argmax, lowest index on ties
};

// Graph handles of one forward pass, kept for loss construction.
template <typename T>
struct PipelineTrace {
  Var<T> emotion;  // [4]
  std::optional<nn::VadOutput<T>> vad;
  std::optional<MaskMode> mask_mode;

  PipelineOutput output() const;
};

// SER_ONLY requires mask_mode == nullopt; every other condition requires one.
template <typename T>
PipelineTrace<T> forward(grad::Graph<T>& g, const grad::Tensor<T>& stack, PipelineParams<T>& p, Condition cond,
                         std::optional<MaskMode> mask_mode);

// Cross-entropy of the emotion posteriors against `label`.
template <typename T>
Var<T> ser_loss(const PipelineTrace<T>& trace, int label);

// Inference path: hard mask (or none for SER_ONLY), no gradients.
PipelineOutput infer(const nn::FeatureStack& stack, const PipelineParams<float>& p, Condition cond);

}  // namespace emovad::pipeline
