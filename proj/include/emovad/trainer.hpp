#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emovad/corpus.hpp"
#include "emovad/pipeline.hpp"

namespace emovad::train {

using pipeline::Condition;
using pipeline::GroupSet;
using pipeline::PipelineParams;
using Dataset = std::vector<const corpus::Utterance*>;

struct TrainConfig {
  double learning_rate = 1e-4;
  // Multiplier on learning_rate for the featurizer logits only.
  double featurizer_lr_scale = 1.0;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;  // epochs without validation improvement
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  nn::MaskMode mask_mode = nn::MaskMode::kSoft;  // fine-tuning only
  bool shared_featurizer = false;                // fine-tuning only

  void validate() const;
};

// Optimizer and schedule fields only; seed, mask_mode and shared_featurizer
// are owned by the run configuration.
void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c);

// Moments keyed by "group/name"; allocated on a tensor's first update.
struct AdamState {
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update of every non-frozen tensor from its
// accumulated grad(). t advances even when all gradients are zero. Throws
// NumericError, before touching anything, if a trainable gradient is not finite.
void adam_step(PipelineParams<float>& params, AdamState& state, const TrainConfig& cfg);

enum class Phase { kPretrainVad, kPretrainSer, kFinetune };
std::string_view phase_name(Phase p);  // pretrain-vad|pretrain-ser|finetune
Phase parse_phase(std::string_view s);

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> train_loss;  // none for the epoch-0 evaluation
  double val_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainLog {
  Phase phase = Phase::kPretrainVad;
  std::optional<Condition> condition;
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;
  bool stopped_early = false;
};

nlohmann::ordered_json to_json(const TrainLog& log, const GroupSet& trainable);

// Everything needed to continue a run bit-exactly.
struct TrainState {
  Phase phase = Phase::kPretrainVad;
  std::optional<Condition> condition;
  GroupSet trainable;
  PipelineParams<float> params;  // current
  PipelineParams<float> best;    // selected so far
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  double best_metric = 0.0;
  double best_loss = 0.0;
  std::size_t since_best = 0;
  TrainLog log;

  bool finished(const TrainConfig& cfg) const {
    return log.stopped_early || epoch >= cfg.max_epochs;
  }
};

struct Validation {
  double metric = 0.0;  // higher is better
  double loss = 0.0;
};

// Trains {feat_vad, vad} on frame-level CE; selection on val frame accuracy.
TrainState start_pretrain_vad(const PipelineParams<float>& init, const Dataset& val, const TrainConfig& cfg);
// Trains {feat_ser, ser} on utterance CE without a VAD stage; selection on val UA.
TrainState start_pretrain_ser(const PipelineParams<float>& init, const Dataset& val, const TrainConfig& cfg);
// Trains trainable_groups(cond) on the SER loss through the masked pipeline;
// selection on val UA under the hard mask.
TrainState start_finetune(const PipelineParams<float>& init, Condition cond, const Dataset& val,
                          const TrainConfig& cfg);

// Runs epochs until max_epochs or patience is exhausted. Resuming a state
// restored from a checkpoint continues exactly where the original run was.
void run(TrainState& state, const Dataset& train, const Dataset& val, const TrainConfig& cfg);

// Forward/backward over one batch followed by one Adam step; returns the mean loss.
double train_step(TrainState& state, std::span<const corpus::Utterance* const> batch, const TrainConfig& cfg);

// Loss of one utterance in the phase's training configuration. Gradients
// accumulate (scaled by weight) into tensors with requires_grad set.
double utterance_loss(const TrainState& state, PipelineParams<float>& params, const corpus::Utterance& u,
                      const TrainConfig& cfg, std::optional<float> backward_weight);

Validation validate(const TrainState& state, const PipelineParams<float>& params, const Dataset& val);

// Convenience wrappers: start + run.
TrainState pretrain_vad(const Dataset& train, const Dataset& val, const PipelineParams<float>& init,
                        const TrainConfig& cfg);
TrainState pretrain_ser(const Dataset& train, const Dataset& val, const PipelineParams<float>& init,
                        const TrainConfig& cfg);
TrainState finetune(const Dataset& train, const Dataset& val, Condition cond, const PipelineParams<float>& init,
                    const TrainConfig& cfg);

// Fine-tuning start point: VAD branch from the VAD run, SER branch from the SER run.
PipelineParams<float> combine_pretrained(const PipelineParams<float>& vad_run, const PipelineParams<float>& ser_run);

Dataset view(const std::vector<corpus::Utterance>& utts, std::optional<corpus::Split> split = std::nullopt);

}  // namespace emovad::train
