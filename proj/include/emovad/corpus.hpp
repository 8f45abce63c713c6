#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "emovad/blocks.hpp"

namespace emovad::corpus {

using grad::Tensor;

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct SynthSpec {
  std::size_t n_train = 400;
  std::size_t n_val = 100;
  std::size_t n_test = 100;
  std::size_t dim = 32;
  std::size_t t_min = 80;
  std::size_t t_max = 300;
  double extension_factor = 2.6;
  double nonspeech_ratio = 0.4;
  std::vector<double> snr_db_levels{10.0, 5.0, 0.0, -5.0, -10.0};
  std::set<std::size_t> vad_info_layers{0, 1, 2, 3, 4};
  std::set<std::size_t> emo_info_layers{8, 9, 10};
  double noise_std = 0.5;
  double speech_gain = 1.0;
  // Scale of the emotion prototypes. At 1 every condition saturates near
  // UA 1.0 at 0 dB; configs/desk.json lowers it. See README.
  double emotion_gain = 1.0;
  // Target mean length in frames of one contiguous speech run.
  double mean_speech_run = 25.0;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t total() const { return n_train + n_val + n_test; }
};

void to_json(nlohmann::ordered_json& j, const SynthSpec& s);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::ordered_json& j, SynthSpec& s);

// Unit-norm vectors planted into the stack.
struct Prototypes {
  std::vector<float> speech;                                     // [D]
  std::array<std::vector<float>, nn::kNumEmotions> emotions;     // pairwise orthogonal
};
Prototypes make_prototypes(std::uint64_t seed, std::size_t dim);

struct Utterance {
  std::string id;
  nn::FeatureStack stack;
  std::vector<std::uint8_t> frame_labels;  // empty when unknown
  std::optional<int> emotion;
  std::optional<double> snr_db;
  Split split = Split::kTrain;
  bool extended = false;

  std::size_t num_frames() const { return stack.num_frames(); }
  std::size_t speech_frames() const;
  // Shape, label length and label domain checks; throws ShapeError/ConfigError.
  void validate() const;
};

// Utterances ordered train, val, test; utterance i draws every random number
// from a stream seeded by (spec.seed, i), so the result does not depend on
// generation order.
std::vector<Utterance> generate_corpus(const SynthSpec& spec);
Utterance generate_utterance(const SynthSpec& spec, const Prototypes& protos, std::size_t index);

// Contiguous-run speech/non-speech labelling with exactly round(ratio*T)
// non-speech frames. Throws ConfigError when that leaves no frame of either kind.
std::vector<std::uint8_t> draw_frame_labels(std::size_t frames, double nonspeech_ratio, double mean_speech_run,
                                            std::uint64_t seed);

// Pads with llround((factor-1)*T) noise-only frames split uniformly at random
// between front and back.
Utterance extend_utterance(const Utterance& u, double factor, std::uint64_t seed, double noise_std = 0.5);

// Additive white Gaussian noise at snr_db relative to the mean power of the
// speech frames of u.
Utterance mix_noise(const Utterance& u, double snr_db, std::uint64_t seed);
double speech_power(const Utterance& u);

// Extended copy of u (factor from spec), mixed at snr_db when given. Seeds
// derive from (spec.seed, u.id), so every SNR variant of one utterance shares
// the same padding.
Utterance make_variant(const Utterance& u, const SynthSpec& spec, std::optional<double> snr_db);
// Extended copy mixed at an SNR drawn uniformly from spec.snr_db_levels.
Utterance make_noisy_training_variant(const Utterance& u, const SynthSpec& spec);

// Feature file ("SSLF" v1).
inline constexpr std::uint32_t kSslfVersion = 1;
inline constexpr std::uint32_t kFlagFrameLabels = 1u << 0;
inline constexpr std::uint32_t kFlagEmotion = 1u << 1;

std::vector<std::uint8_t> encode_feature_file(const Utterance& u);
Utterance decode_feature_file(std::span<const std::uint8_t> bytes);
void write_feature_file(const Utterance& u, const std::filesystem::path& path);
Utterance read_feature_file(const std::filesystem::path& path);

}  // namespace emovad::corpus
