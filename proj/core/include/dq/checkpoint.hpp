#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "dq/model.hpp"

namespace dq {

// Byte layout (little-endian):
//   0   char[4]  "DQCK"
//   4   u32      format version
//   8   u64      manifest length L
//   16  u8[L]    JSON manifest (model spec, quant scheme, train config,
//                tensor table, quantizer states)
//   16+L         f32 arrays in tensor-table order, row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(Model& model, const nlohmann::json& train_config, const std::filesystem::path& path);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json train_config;
  nlohmann::json manifest;
};

/// Throws LoadError for missing files, bad magic, unknown versions or
/// tensors whose shapes disagree with the model spec.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dq
