#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "emovad/trainer.hpp"

namespace emovad::train {

struct NamedTensor {
  std::string name;
  grad::Tensor<float> tensor;
};

// Named-tensor archive ("NTAR"): ordered entries plus a JSON metadata block.
struct Archive {
  std::vector<NamedTensor> entries;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  const grad::Tensor<float>* find(std::string_view name) const;
  // Throws InputError naming the missing entry.
  const grad::Tensor<float>& at(std::string_view name) const;
  void add(std::string name, grad::Tensor<float> t);
};

inline constexpr std::uint32_t kNtarVersion = 1;

std::vector<std::uint8_t> encode_ntar(const Archive& a);
Archive decode_ntar(std::span<const std::uint8_t> bytes);
void write_ntar(const Archive& a, const std::filesystem::path& path);
Archive read_ntar(const std::filesystem::path& path);

// Tensors of p stored as "<prefix>/<group>/<name>".
void add_params(Archive& a, std::string_view prefix, const PipelineParams<float>& p);
PipelineParams<float> read_params(const Archive& a, std::string_view prefix);

// Full training state: selected params under "model/", current params under
// "current/", Adam moments under "adam.m/" and "adam.v/" with their
// parameter's shape, counters in the metadata.
Archive state_to_archive(const TrainState& s, const nlohmann::ordered_json& extra_meta = {});
TrainState state_from_archive(const Archive& a);

// The selected parameters of a checkpoint written by state_to_archive.
PipelineParams<float> model_from_archive(const Archive& a);

}  // namespace emovad::train
