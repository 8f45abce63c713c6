#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "json.hpp"

#include "emovad/corpus.hpp"
#include "emovad/pipeline.hpp"

namespace emovad::metrics {

inline constexpr std::size_t kClasses = nn::kNumEmotions;
using Confusion = std::array<std::array<std::size_t, kClasses>, kClasses>;  // [true][pred]

struct SerMetrics {
  double ua = 0.0;
  double wa = 0.0;
  std::array<std::optional<double>, kClasses> recalls;  // nullopt for classes absent from labels
  Confusion confusion{};
  std::size_t n = 0;
};

// Throws Error on empty or mismatched input, or on class ids outside [0,4).
SerMetrics ser_metrics(std::span<const int> preds, std::span<const int> labels);

struct VadMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // 1.0 when nothing is predicted speech
  double recall = 0.0;     // 1.0 when nothing is truly speech
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

VadMetrics vad_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

// Accumulates frame counts over many utterances.
struct VadTally {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
  VadMetrics finish() const;
};

struct EvalReport {
  SerMetrics ser;
  std::optional<VadMetrics> vad;
};

nlohmann::ordered_json to_json(const SerMetrics& m);
nlohmann::ordered_json to_json(const VadMetrics& m);

// Analysis exports, schema "v": 1.
nlohmann::ordered_json featurizer_weights_json(const pipeline::PipelineParams<float>& p);
void export_featurizer_weights(const pipeline::PipelineParams<float>& p, const std::filesystem::path& path);

nlohmann::ordered_json vad_timeline_json(const corpus::Utterance& u, const pipeline::PipelineOutput& out);
void export_vad_timeline(const corpus::Utterance& u, const pipeline::PipelineOutput& out,
                         const std::filesystem::path& path);

// Pretty-printed JSON with a trailing newline.
void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path);

}  // namespace emovad::metrics
