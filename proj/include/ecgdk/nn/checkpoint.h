#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgdk/nn/tensor.h"

namespace ecgdk::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& entry(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "ECGDKCK1" | u32 version | u64 manifest_len | manifest JSON (UTF-8)
//   u32 entry_count | entries: u32 name_len | name | u32 rank | u64 dims[rank] | f32 values[numel]
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     std::span<const NamedParam> params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies entries into same-named parameters. Names and shapes must match exactly.
void assign_params(const Checkpoint& ckpt, std::span<NamedParam> params);

// Rounds every value to the nearest float32, in place.
void round_to_float32(std::span<double> values);

}  // namespace ecgdk::nn
