#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "emovad/graph.hpp"

namespace emovad::nn {

using grad::Graph;
using grad::Tensor;
using grad::Var;

inline constexpr std::size_t kNumLayers = 13;  // CNN output + 12 Transformer blocks
inline constexpr std::size_t kHidden = 256;
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kNumEmotions = 4;
inline constexpr std::size_t kVadConvLayers = 4;
inline constexpr std::size_t kSerConvLayers = 3;
inline constexpr std::size_t kPoolKernel = 2;
inline constexpr std::size_t kPoolStride = 2;
inline constexpr double kLeakySlope = 0.01;
inline constexpr double kFramePeriodMs = 20.0;
inline constexpr std::size_t kDefaultFeatureDim = 768;

// VAD output columns.
inline constexpr std::size_t kNonSpeech = 0;
inline constexpr std::size_t kSpeech = 1;

enum class Emotion : std::uint8_t { kHappy = 0, kSad = 1, kNeutral = 2, kAngry = 3 };
std::string_view emotion_name(int id);

// How the VAD decision gates the SER input.
//   kHard: argmax 0/1 mask, no gradient into the VAD branch.
//   kSoft: the speech probability itself.
//   kStraightThrough: hard values forward, soft gradient backward.
enum class MaskMode { kHard, kSoft, kStraightThrough };
std::string_view mask_mode_name(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);

// Hidden states of the SSL encoder for one utterance, [L x T x D] with
// layer 0 being the input of the first Transformer block.
struct FeatureStack {
  Tensor<float> layers;

  std::size_t num_layers() const { return layers.dim(0); }
  std::size_t num_frames() const { return layers.dim(1); }
  std::size_t dim() const { return layers.dim(2); }
  // Throws ShapeError unless rank 3, L == 13, all values finite.
  void validate() const;
};

// Softmax-normalized weights over the 13 hidden states.
template <typename T>
struct FeaturizerParams {
  Tensor<T> logits{{kNumLayers}};

  template <typename F>
  void visit(F&& f) { f("logits", logits); }
  template <typename F>
  void visit(F&& f) const { f("logits", logits); }

  std::vector<double> normalized_weights() const;

  template <typename U>
  FeaturizerParams<U> cast() const { return {logits.template cast<U>()}; }
};

template <typename T>
struct VadParams {
  std::array<Tensor<T>, kVadConvLayers> conv_w;  // [256 x C_in x 3]
  std::array<Tensor<T>, kVadConvLayers> conv_b;  // [256]
  Tensor<T> fc_w;                                // [256 x 2], columns [non-speech, speech]
  Tensor<T> fc_b;                                // [2]

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (std::size_t i = 0; i < kVadConvLayers; ++i) {
      f("conv" + std::to_string(i) + ".w", self.conv_w[i]);
      f("conv" + std::to_string(i) + ".b", self.conv_b[i]);
    }
    f("fc.w", self.fc_w);
    f("fc.b", self.fc_b);
  }

  template <typename U>
  VadParams<U> cast() const {
    VadParams<U> out;
    for (std::size_t i = 0; i < kVadConvLayers; ++i) {
      out.conv_w[i] = conv_w[i].template cast<U>();
      out.conv_b[i] = conv_b[i].template cast<U>();
    }
    out.fc_w = fc_w.template cast<U>();
    out.fc_b = fc_b.template cast<U>();
    return out;
  }
};

template <typename T>
struct SerParams {
  Tensor<T> proj_w;  // [D x 256] framewise reduction
  Tensor<T> proj_b;
  std::array<Tensor<T>, kSerConvLayers> conv_w;  // [256 x 256 x 3]
  std::array<Tensor<T>, kSerConvLayers> conv_b;
  Tensor<T> fc_w;  // [256 x 256]
  Tensor<T> fc_b;
  Tensor<T> attn_u;  // [256] attention query
  Tensor<T> head_w;  // [256 x 256]
  Tensor<T> head_b;
  Tensor<T> out_w;  // [256 x 4]
  Tensor<T> out_b;

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f("proj.w", self.proj_w);
    f("proj.b", self.proj_b);
    for (std::size_t i = 0; i < kSerConvLayers; ++i) {
      f("conv" + std::to_string(i) + ".w", self.conv_w[i]);
      f("conv" + std::to_string(i) + ".b", self.conv_b[i]);
    }
    f("fc.w", self.fc_w);
    f("fc.b", self.fc_b);
    f("attn.u", self.attn_u);
    f("head.w", self.head_w);
    f("head.b", self.head_b);
    f("out.w", self.out_w);
    f("out.b", self.out_b);
  }

  template <typename U>
  SerParams<U> cast() const {
    SerParams<U> out;
    std::vector<Tensor<U>> converted;
    visit([&](const std::string&, const Tensor<T>& t) { converted.push_back(t.template cast<U>()); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Tensor<U>& t) { t = std::move(converted[i++]); });
    return out;
  }
};

template <typename T>
struct VadOutput {
  Var<T> probs;                    // [T x 2]
  std::vector<std::uint8_t> hard;  // 1 iff p(speech) > p(non-speech)
};

// F[t, d] = sum_l softmax(logits)[l] * stack[l, t, d]. stack: [13 x T x D].
template <typename T>
Var<T> featurizer_forward(Var<T> stack, FeaturizerParams<T>& p);

template <typename T>
VadOutput<T> vad_forward(Var<T> features, VadParams<T>& p);

// Per-frame mask as a [T x 1] node according to mode.
template <typename T>
Var<T> make_mask(const VadOutput<T>& vad, MaskMode mode);

// F'[t, :] = mask[t] * F[t, :]. mask: [T x 1].
template <typename T>
Var<T> apply_mask(Var<T> features, Var<T> mask);

// alpha = softmax_t <u, H[t]>; returns sum_t alpha[t] H[t] as [1 x C].
template <typename T>
Var<T> self_attention_pool(Var<T> h, Var<T> u);

// Emotion posteriors [4]. Needs at least one pooling window (T >= 2).
template <typename T>
Var<T> ser_forward(Var<T> features, SerParams<T>& p);

struct InitialParams {
  FeaturizerParams<float> feat_vad;
  FeaturizerParams<float> feat_ser;
  VadParams<float> vad;
  SerParams<float> ser;
};

// Glorot-uniform weights, zero biases, zero featurizer logits. D >= 4, even.
InitialParams init_params(std::uint64_t seed, std::size_t feature_dim);

}  // namespace emovad::nn
