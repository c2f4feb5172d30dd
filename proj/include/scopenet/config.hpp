#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "scopenet/data.hpp"
#include "scopenet/detect.hpp"
#include "scopenet/losses.hpp"
#include "scopenet/model.hpp"

namespace scopenet {

struct OptimizerConfig {
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int steps = 2000;
  int batch_size = 4;
  int warmup_steps = 300;  // linear ramp from lr/10; 0 disables
};

/// Malformed configs raise this with one message per offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::vector<std::string>& problems);
  std::vector<std::string> fields;
};

/// Everything one run needs, fully resolved and serializable. The resolved
/// JSON is canonical (sorted keys), so its hash names the run directory.
struct ExperimentConfig {
  uint64_t seed = 1;
  ModelConfig model = ModelConfig::desk_default();
  RadiusMetric radius_metric = RadiusMetric::kChebyshev;
  LossConfig loss;
  OptimizerConfig optimizer;
  DataConfig data;
  int num_train = 500;
  int num_test = 200;
  uint64_t data_seed = 20240501;  // scene streams; independent of the model seed
  DetectConfig detect;

  /// Mirrors model.uncertainty into the loss/inference paths and
  /// model.num_classes into the data generator.
  void resolve();
  void validate() const;  // throws ConfigError

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);  // overlay onto defaults
  static ExperimentConfig load_file(const std::string& path);

  uint64_t data_seed_train() const;
  uint64_t data_seed_test() const;
};

/// FNV-1a over the canonical resolved JSON, as a 16-hex-digit string.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace scopenet
