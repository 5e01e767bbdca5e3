#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "dractrl/model.hpp"
#include "dractrl/model_config.hpp"
#include "dractrl/numerics/optim.hpp"

namespace dractrl {

// Binary layout, little-endian:
//   "DRAC" | u32 version | u32 header_len | header JSON
//   | u32 tensor_count | per tensor: u32 name_len, name, u8 dtype, u32 rank,
//     u64 extents[rank], u64 byte offset into the data section
//   | data section (raw values)
// Optimizer moments are stored as tensors "opt.m.<name>" / "opt.v.<name>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelConfig config;
  std::string run_config;  // the full run config as JSON, informational
  ModelWeights<T> weights;
  TrainScope scope = TrainScope::none;
  std::optional<OptimizerState<T>> optimizer;
};

// Writes to a temporary file and renames it into place. The optimizer
// state, when given, must match collect_trainable(weights) under `scope`.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& weights, const ModelConfig& config,
                     TrainScope scope = TrainScope::none, const OptimizerState<T>* optimizer = nullptr,
                     const std::string& run_config = "{}");

// FormatError on bad magic, version, dtype or truncation.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Loads into weights built from `expected`; a tensor whose stored shape
// differs throws DimensionError naming it.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace dractrl
