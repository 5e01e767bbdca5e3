#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dractrl/mixup.hpp"
#include "dractrl/model_config.hpp"
#include "dractrl/tasks.hpp"

namespace dractrl {

struct TrainConfig {
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 2000;
  std::size_t batch = 4;
  double pretrain_lr = 1e-3;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t log_interval = 100;
};

struct DataConfig {
  TaskKind task = TaskKind::colorize;
  std::size_t resolution = 32;
  TransitionKind transition = TransitionKind::fade;
  double gamma = 2.2;
  std::size_t count = 64;  // datagen
  double fade_probability = 0.3;
  double max_speed = 0.75;
  int blur_min = 1;
  int blur_max = 10;
  double mask_probability = 0.5;
  std::size_t downsample = 4;
  double edge_threshold = 0.1;
  bool normalize_condition = false;
};

struct SampleConfig {
  int steps = 50;
};

struct EvalConfig {
  std::size_t samples = 64;
  bool vl = false;
  std::string vl_host = "127.0.0.1";
  int vl_port = 8765;
  std::string vl_path = "/score";
  double vl_timeout = 10.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  SampleConfig sample;
  EvalConfig eval;

  TaskSpec task_spec() const;
  MixupSchedule schedule() const { return {model.k, data.gamma}; }
  // Throws ConfigError.
  void validate() const;
};

// Every accepted dotted key, in documentation order.
const std::vector<std::string>& config_keys();

// Flat dotted keys ({"model.k": 2}) or the equivalent nesting
// ({"model": {"k": 2}}). Unknown keys and type mismatches throw ConfigError
// naming the key; absent keys keep their defaults.
RunConfig parse_config(std::string_view json_text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// One key from its command-line spelling, e.g. ("model.omega", "0").
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

// Flat dotted JSON, every key present; parse_config(to_json(c)) == c.
std::string config_to_json(const RunConfig& config);
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json_text);

bool operator==(const ModelConfig& a, const ModelConfig& b);
bool operator==(const RunConfig& a, const RunConfig& b);

// Child seed for a named purpose ("train-data", "eval-data", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

}  // namespace dractrl
