#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sprm/model.hpp"
#include "sprm/synthetic.hpp"
#include "sprm/training.hpp"

namespace sprm {

/// Everything a CLI run needs. Text form: one `key = value` per line, `#`
/// starts a comment, blank lines are ignored. Keys are `seed`, `model.*`,
/// `train.*` and `synth.*`; see README for the full list with defaults.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  synth::SynthConfig synth;
  std::uint64_t seed = 0;

  /// Copies `seed` into the training and generator configs.
  void apply_seed(std::uint64_t value);
  bool operator==(const RunConfig&) const = default;
};

struct ParsedConfig {
  RunConfig config;
  /// Keys that were not set and kept their defaults, in table order.
  std::vector<std::string> defaulted;
};

/// Throws ConfigError naming the line for unknown keys, duplicates,
/// malformed lines and unparsable values.
ParsedConfig parse_config(const std::string& text);
ParsedConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in table order.
std::string to_text(const RunConfig& config);

/// Only the model.* keys; used as the checkpoint's config echo.
std::string model_config_text(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

/// All recognised keys, in table order.
std::vector<std::string> config_keys();

}  // namespace sprm
