#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pslab/dataset.hpp"
#include "pslab/pipeline.hpp"

namespace pslab {

/// Every knob of a run. Serialized as flat `key = value` lines; the key
/// registry lives in config.cpp and unknown keys are rejected.
struct ExperimentConfig {
  DatasetConfig dataset;
  std::uint64_t model_seed = 7;
  // the dropout site is only active when dropout_enabled is set
  ModelConfig model{8, 16, {96, 64}, 32, DropoutSite::kBeforeFeatHead, 0.5};
  TrainSchedule schedule;
  bool dropout_enabled = false;
  int log_stride = 10;
  int checkpoint_every = 500;
  int gallery_size = 50;
  std::vector<int> gallery_sizes = {10, 20, 50, 100};
  std::uint64_t eval_seed = 11;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int folds = 3;
  std::vector<double> lambdas = {0.0, 0.016, 0.032, 0.064, 0.128};
  int study_interval = 250;

  void validate() const;
  // Model config with the dropout flag applied.
  ModelConfig effective_model() const;
};

struct ConfigKey {
  std::string name;
  std::string description;
};

const std::vector<ConfigKey>& config_registry();

/// Parses `key = value` lines over the defaults. Blank lines and `#`
/// comments are ignored. Throws ConfigError on unknown keys or bad values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text: every registered key, sorted, shortest round-trip
/// number formatting.
std::string to_text(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);
std::string fnv1a_hex(const std::string& data);

std::string to_string(CenterInputMode mode);
std::string to_string(DropoutSite site);

}  // namespace pslab
