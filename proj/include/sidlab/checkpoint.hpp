#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sidlab/nn.hpp"

namespace sidlab {

// Checkpoint directory: manifest.json describing architecture, seeds and
// training config, plus one raw little-endian float32 file per tensor.
// `extra` carries model-kind specifics (serving temperature, defense config)
// so a served model is self-describing.
struct Checkpoint {
    int format_version = 1;
    std::string kind;  // "sid" | "mlp"
    nlohmann::json arch;
    nlohmann::json train_config;
    nlohmann::json extra;
    nn::ParamSet params;
    std::vector<std::pair<std::string, std::vector<float>>> aux;  // e.g. feature stats
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace sidlab
