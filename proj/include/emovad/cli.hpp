#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "emovad/corpus.hpp"
#include "emovad/trainer.hpp"

namespace emovad::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct Paths {
  std::filesystem::path corpus = "corpus";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path reports = "reports";
};

// Merged view of the config file and command-line overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  corpus::SynthSpec corpus;
  train::TrainConfig pretrain;
  train::TrainConfig finetune;
  pipeline::Condition condition = pipeline::Condition::kFtBoth;
  nn::MaskMode mask_mode = nn::MaskMode::kSoft;
  bool shared_featurizer = false;
  Paths paths;  // relative entries resolve against root
  std::filesystem::path root = ".";
  std::size_t workers = 1;
  std::size_t timeline_count = 3;
  double timeline_snr_db = 0.0;

  // Pushes seed, mask_mode and shared_featurizer into the sub-configs.
  void resolve();
  std::filesystem::path corpus_dir() const;
  std::filesystem::path checkpoint_dir() const;
  std::filesystem::path report_dir() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
// Applies the keys present in j on top of c. Unknown keys are ConfigErrors.
void apply_json(const nlohmann::ordered_json& j, RunConfig& c);

// Entry point shared by the executable and the tests. Returns the exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace emovad::cli
