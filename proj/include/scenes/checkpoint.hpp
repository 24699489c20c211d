#pragma once

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include "scenes/nets.hpp"

namespace scenes {

// Single-file archive: 8-byte magic, u64 little-endian header length, JSON
// header (arch + train config echo + entry table of name/shape/offset),
// then raw float32 little-endian parameter data.
struct Checkpoint {
    ExpertArchConfig arch;
    nlohmann::json train_config;  // echoed verbatim
    std::vector<Expert> experts;
};

void save_checkpoint(const std::vector<Expert>& experts, const ExpertArchConfig& arch,
                     const nlohmann::json& train_config, const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           torch::Dtype dtype = torch::kFloat32);

nlohmann::json arch_to_json(const ExpertArchConfig& arch);
ExpertArchConfig arch_from_json(const nlohmann::json& j);

}  // namespace scenes
