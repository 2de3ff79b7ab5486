#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "pttt/model.hpp"
#include "pttt/trainer.hpp"

namespace pttt {

nlohmann::json arch_to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

// Checkpoint directory: meta.json (arch, array table, component digests,
// optimizer scalars, echoed config) plus raw float64 payloads params.bin and
// optimizer.bin. Round-trips are bit-exact.
void save_checkpoint(const std::string& directory, const ModelParams& params,
                     const OptimizerState* opt, const nlohmann::json& config_echo);

struct LoadedCheckpoint {
    ModelParams params;
    std::optional<OptimizerState> opt;
    nlohmann::json config_echo;
};

LoadedCheckpoint load_checkpoint(const std::string& directory);

}  // namespace pttt
