#pragma once

// Experiment configuration: one JSON document with sections for the
// backbones, fusion, decoder, data, train, metrics and bench settings.
// Unknown keys are rejected at every level.

#include "lgnet/data.hpp"
#include "lgnet/metrics.hpp"
#include "lgnet/model.hpp"
#include "lgnet/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::vector<std::string> train_dirs;  // empty: generate in memory from `scene`
  std::vector<std::string> val_dirs;
  int train_count = 512;
  int val_count = 128;
  std::uint64_t dataset_seed = 2024;
  SceneSpec scene;
  bool native_eval = false;  // score at the original image size instead of the model side
};

struct BenchConfig {
  int passes = 1000;
  int warmup = 10;
};

struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  MetricConfig metrics;
  BenchConfig bench;
  std::string variant = "full";
  std::vector<std::string> ablate_variants{"full", "learned_only", "general_only", "general_small", "no_se"};
  int calibration_bins = 10;
  std::string out_dir = "runs/default";
  std::uint64_t seed = 0;

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

/// Hash of everything that determines a trained checkpoint (model sections,
/// variant, train section, seed), as hex.
std::string config_hash(const ExperimentConfig& c);

/// Model and train settings with the experiment seed applied (it drives
/// initialization, shuffling and augmentation).
ModelConfig resolved_model(const ExperimentConfig& c);
TrainConfig resolved_train(const ExperimentConfig& c);

/// Seeds of the generated train / val splits.
std::uint64_t split_seed(const DataConfig& d, const std::string& split);

}  // namespace lgnet
