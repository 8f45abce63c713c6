#include "emovad/blocks.hpp"

#include <cmath>
#include <random>

#include "emovad/ops.hpp"

namespace emovad::nn {

using namespace emovad::grad;

std::string_view emotion_name(int id) {
  static constexpr std::array<std::string_view, kNumEmotions> names{"happy", "sad", "neutral", "angry"};
  if (id < 0 || id >= static_cast<int>(kNumEmotions)) throw Error("emotion id out of range: " + std::to_string(id));
  return names[id];
}

std::string_view mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::kHard: return "hard";
    case MaskMode::kSoft: return "soft";
    case MaskMode::kStraightThrough: return "ste";
  }
  return "?";
}

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "hard") return MaskMode::kHard;
  if (s == "soft") return MaskMode::kSoft;
  if (s == "ste") return MaskMode::kStraightThrough;
  throw ConfigError("unknown mask mode '" + std::string(s) + "' (expected hard|soft|ste)");
}

void FeatureStack::validate() const {
  if (layers.rank() != 3)
    throw ShapeError("feature stack must be [L x T x D], got " + dims_to_string(layers.dims()));
  if (layers.dim(0) != kNumLayers)
    throw ShapeError("feature stack has " + std::to_string(layers.dim(0)) + " layers, expected " +
                     std::to_string(kNumLayers));
  if (!layers.all_finite()) throw ShapeError("feature stack contains non-finite values");
}

template <typename T>
std::vector<double> FeaturizerParams<T>::normalized_weights() const {
  double mx = logits[0];
  for (auto v : logits.data()) mx = std::max<double>(mx, v);
  std::vector<double> w(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) total += w[i] = std::exp(static_cast<double>(logits[i]) - mx);
  for (auto& v : w) v /= total;
  return w;
}

template <typename T>
Var<T> featurizer_forward(Var<T> stack, FeaturizerParams<T>& p) {
  const auto& d = stack.dims();
  if (d.size() != 3 || d[0] != kNumLayers)
    throw ShapeError("featurizer expects a [13 x T x D] stack, got " + dims_to_string(d));
  if (p.logits.size() != kNumLayers)
    throw ShapeError("featurizer logits must have length 13, got " + std::to_string(p.logits.size()));
  auto& g = *stack.graph;
  auto w = softmax(g.param(p.logits), 0);
  auto mixed = matmul(reshape(w, {1, kNumLayers}), reshape(stack, {kNumLayers, d[1] * d[2]}));
  return reshape(mixed, {d[1], d[2]});
}

template <typename T>
VadOutput<T> vad_forward(Var<T> features, VadParams<T>& p) {
  auto& g = *features.graph;
  auto h = transpose(features);
  for (std::size_t i = 0; i < kVadConvLayers; ++i)
    h = leaky_relu(conv1d(h, g.param(p.conv_w[i]), g.param(p.conv_b[i])), static_cast<T>(kLeakySlope));
  auto logits = add_bias(matmul(transpose(h), g.param(p.fc_w)), g.param(p.fc_b));
  VadOutput<T> out;
  out.probs = softmax(logits, 1);
  const auto& pv = out.probs.value();
  const std::size_t frames = pv.dim(0);
  out.hard.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) out.hard[t] = pv.at(t, kSpeech) > pv.at(t, kNonSpeech) ? 1 : 0;
  return out;
}

template <typename T>
Var<T> make_mask(const VadOutput<T>& vad, MaskMode mode) {
  const std::size_t frames = vad.hard.size();
  Tensor<T> hard({frames, 1});
  for (std::size_t t = 0; t < frames; ++t) hard[t] = static_cast<T>(vad.hard[t]);
  switch (mode) {
    case MaskMode::kHard: return vad.probs.graph->constant(std::move(hard));
    case MaskMode::kSoft: return column(vad.probs, kSpeech);
    case MaskMode::kStraightThrough: return straight_through(column(vad.probs, kSpeech), std::move(hard));
  }
  throw ConfigError("unknown mask mode");
}

template <typename T>
Var<T> apply_mask(Var<T> features, Var<T> mask) {
  const auto& fd = features.dims();
  const auto& md = mask.dims();
  if (fd.size() != 2 || md.size() != 2 || md[1] != 1 || md[0] != fd[0])
    throw ShapeError("mask " + dims_to_string(md) + " does not cover features " + dims_to_string(fd));
  return hadamard(features, mask);
}

template <typename T>
Var<T> self_attention_pool(Var<T> h, Var<T> u) {
  const auto& hd = h.dims();
  if (hd.size() != 2 || u.value().size() != hd[1])
    throw ShapeError("attention query " + dims_to_string(u.dims()) + " incompatible with " + dims_to_string(hd));
  auto scores = matmul(h, reshape(u, {hd[1], 1}));  // [T x 1]
  auto alpha = softmax(scores, 0);
  return matmul(transpose(alpha), h);
}

template <typename T>
Var<T> ser_forward(Var<T> features, SerParams<T>& p) {
  auto& g = *features.graph;
  const auto& fd = features.dims();
  if (fd.size() != 2) throw ShapeError("SER expects [T x D] features, got " + dims_to_string(fd));
  if (fd[0] < kPoolKernel)
    throw ShapeError("input too short for SER: " + std::to_string(fd[0]) + " frames, need at least " +
                     std::to_string(kPoolKernel));
  auto x = add_bias(matmul(features, g.param(p.proj_w)), g.param(p.proj_b));
  auto h = mean_pool(transpose(x), kPoolKernel, kPoolStride);
  for (std::size_t i = 0; i < kSerConvLayers; ++i) h = relu(conv1d(h, g.param(p.conv_w[i]), g.param(p.conv_b[i])));
  auto frames = relu(add_bias(matmul(transpose(h), g.param(p.fc_w)), g.param(p.fc_b)));
  auto pooled = self_attention_pool(frames, g.param(p.attn_u));
  auto z = relu(add_bias(matmul(pooled, g.param(p.head_w)), g.param(p.head_b)));
  auto logits = add_bias(matmul(z, g.param(p.out_w)), g.param(p.out_b));
  return softmax(reshape(logits, {kNumEmotions}), 0);
}

namespace {

Tensor<float> glorot(std::mt19937_64& rng, Dims dims, std::size_t fan_in, std::size_t fan_out) {
  const float a = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  std::uniform_real_distribution<float> dist(-a, a);
  Tensor<float> t(std::move(dims));
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

Tensor<float> conv_weight(std::mt19937_64& rng, std::size_t c_out, std::size_t c_in) {
  return glorot(rng, {c_out, c_in, kKernel}, c_in * kKernel, c_out * kKernel);
}

}  // namespace

InitialParams init_params(std::uint64_t seed, std::size_t feature_dim) {
  if (feature_dim < 4 || feature_dim % 2 != 0)
    throw ConfigError("feature dim must be even and >= 4, got " + std::to_string(feature_dim));
  std::mt19937_64 rng(seed);
  InitialParams p;
  for (std::size_t i = 0; i < kVadConvLayers; ++i) {
    p.vad.conv_w[i] = conv_weight(rng, kHidden, i == 0 ? feature_dim : kHidden);
    p.vad.conv_b[i] = Tensor<float>({kHidden});
  }
  p.vad.fc_w = glorot(rng, {kHidden, 2}, kHidden, 2);
  p.vad.fc_b = Tensor<float>({2});

  auto& s = p.ser;
  s.proj_w = glorot(rng, {feature_dim, kHidden}, feature_dim, kHidden);
  s.proj_b = Tensor<float>({kHidden});
  for (std::size_t i = 0; i < kSerConvLayers; ++i) {
    s.conv_w[i] = conv_weight(rng, kHidden, kHidden);
    s.conv_b[i] = Tensor<float>({kHidden});
  }
  s.fc_w = glorot(rng, {kHidden, kHidden}, kHidden, kHidden);
  s.fc_b = Tensor<float>({kHidden});
  s.attn_u = glorot(rng, {kHidden}, kHidden, 1);
  s.head_w = glorot(rng, {kHidden, kHidden}, kHidden, kHidden);
  s.head_b = Tensor<float>({kHidden});
  s.out_w = glorot(rng, {kHidden, kNumEmotions}, kHidden, kNumEmotions);
  s.out_b = Tensor<float>({kNumEmotions});
  return p;
}

#define EMOVAD_INSTANTIATE_BLOCKS(T)                                  \
  template struct FeaturizerParams<T>;                                \
  template Var<T> featurizer_forward(Var<T>, FeaturizerParams<T>&);   \
  template VadOutput<T> vad_forward(Var<T>, VadParams<T>&);           \
  template Var<T> make_mask(const VadOutput<T>&, MaskMode);           \
  template Var<T> apply_mask(Var<T>, Var<T>);                         \
  template Var<T> self_attention_pool(Var<T>, Var<T>);                \
  template Var<T> ser_forward(Var<T>, SerParams<T>&);

EMOVAD_INSTANTIATE_BLOCKS(float)
EMOVAD_INSTANTIATE_BLOCKS(double)

}  // namespace emovad::nn
