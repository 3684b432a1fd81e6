#pragma once

#include <filesystem>

#include "json.hpp"
#include "rolelab/grpo.hpp"

namespace rolelab {

// Named presets applied before explicit keys:
//   "reference": the TrainConfig defaults (full-size batches, lr 2e-5).
//   "desk":  the same with lr 2e-2, 16 problems per step, 300 steps.
void apply_preset(RunConfig& cfg, std::string_view preset);

// Unknown keys raise ConfigError so typos are not silently ignored.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json load_json_file(const std::filesystem::path& path);  // ConfigError on failure
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace rolelab
