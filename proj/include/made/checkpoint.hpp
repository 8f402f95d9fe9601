#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "made/model.hpp"

namespace made {

// Layout (little-endian):
//   "MADECKPT" | u32 version | u64 len | config text | u64 len | vocabulary text
//   | u64 len | class map text | u32 tensor count
//   | per tensor: u32 name len | name | u32 rows | u32 cols | rows*cols f64 (column-major)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::string vocabulary_text;
  std::vector<int> class_to_identity;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string model_config_to_text(const ModelConfig& c);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace made
