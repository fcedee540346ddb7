#pragma once

#include "avsc/nn/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace avsc::nn {

inline constexpr const char* kCheckpointFormat = "avsc-checkpoint/1";

/// One-file checkpoint: a JSON header (format tag, model kind, config and
/// array table) followed by little-endian float64 arrays.
struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::map<std::string, Weights> groups;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avsc::nn
