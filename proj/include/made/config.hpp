#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "made/losses.hpp"
#include "made/model.hpp"
#include "made/synthdata.hpp"
#include "made/trainer.hpp"

namespace made {

/// Everything a run needs, flattened into `key = value` text. Keys are
/// namespaced by module (gen., model., train., loss., dem.); unknown keys are
/// rejected. All randomness derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string vocabulary = "default";  // "default" or a vocabulary file path
  int workers = 1;
  GenConfig gen;
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Every accepted key, in the order `to_text` writes them.
const std::vector<ConfigKey>& config_schema();

/// Defaults overridden by `text`. `preset = toy|paper` (if present) is
/// applied first.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies a single override; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Fully resolved config; parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);
void write_resolved_config(const std::filesystem::path& path, const RunConfig& config);

/// Vocabulary named by the config.
AttributeVocabulary resolve_vocabulary(const RunConfig& config);
std::string resolve_vocabulary_text(const RunConfig& config);

}  // namespace made
