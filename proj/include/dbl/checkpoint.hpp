#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dbl/predictor.hpp"
#include "dbl/tensor.hpp"

namespace dbl {

// Container layout: "ELJH" magic, u16 format version, u32 metadata length +
// JSON bytes, u32 tensor count, then per tensor: u32 name length + name,
// u32 rank + u32 dims, raw float32 little-endian payload.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

struct LoadedCheckpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& find(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Model convenience wrappers: architecture fields live in meta["arch"],
// caller-provided context (role, history, configs) merges into meta.
void save_model(const std::string& path, const NoisePredictor& m, nlohmann::json meta);
NoisePredictor load_model(const std::string& path, nlohmann::json* meta_out = nullptr);

}  // namespace dbl
