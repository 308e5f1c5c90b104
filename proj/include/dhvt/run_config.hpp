#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dhvt/config.hpp"
#include "dhvt/data.hpp"
#include "dhvt/tensor.hpp"

namespace dhvt {

struct DataSpec {
  enum class Kind { kSynthetic, kCifar };
  Kind kind = Kind::kSynthetic;
  std::filesystem::path cifar_dir;
  std::size_t classes = 4;
  std::size_t samples = 64;
  std::size_t size = 32;
  std::uint64_t seed = 7;
  Normalization norm;
};

struct RunConfig {
  ModelConfig model;
  DataSpec data;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  double warmup_epochs = 5;
  std::uint64_t seed = 0;
  Dtype dtype = Dtype::kF32;
  bool flip = false;
  bool crop = false;
  // End training as soon as one epoch classifies every training sample correctly.
  bool stop_at_perfect = false;
  std::filesystem::path out_dir;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected (ConfigError).
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& rc);
// "model" may be a config object or a variant name such as "DHVT-T/CIFAR/4".
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_json(const nlohmann::json& j, const std::filesystem::path& path);

// Parses "DHVT-T/CIFAR/4".
ModelConfig variant_from_name(const std::string& name);

}  // namespace dhvt
