#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rolelab/grpo.hpp"

namespace rolelab {

struct GridConfig {
  std::vector<WorkflowKind> workflows{WorkflowKind::kVoting};
  std::vector<TaskKind> tasks{TaskKind::kMath};
  std::vector<int> capacities{256};
  std::vector<RoutingMode> routings{RoutingMode::kShared, RoutingMode::kIsolated};
  std::vector<std::uint64_t> seeds{0};
  RunConfig base;  // everything except the grid axes
};

GridConfig grid_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridConfig& g);

struct CellResult {
  std::string cell_id;
  WorkflowKind workflow = WorkflowKind::kVoting;
  RoutingMode routing = RoutingMode::kIsolated;
  TaskKind task = TaskKind::kMath;
  int capacity = 0;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  bool ok = false;
  std::string error;
  double base_accuracy = 0.0;
  double peak_validation_accuracy = 0.0;
  int step_at_peak = 0;
  double terminal_accuracy = 0.0;
  std::map<std::string, AmplitudeStats> amplitude;
  // Peak multi-agent accuracy minus the matched single-agent peak, in
  // percentage points; absent without a usable control.
  std::optional<double> residual_vs_sa;
};

nlohmann::json to_json(const CellResult& c);
CellResult cell_from_json(const nlohmann::json& j);

struct GridResult {
  std::vector<CellResult> cells;
  std::vector<CellResult> controls;  // one per (task, capacity, seed)
};

std::string cell_id(WorkflowKind w, RoutingMode r, TaskKind t, int capacity, std::uint64_t seed);
std::string control_id(TaskKind t, int capacity, std::uint64_t seed);

// out_dir/grid.json, out_dir/cells/<id>/, out_dir/controls/<id>/,
// out_dir/results.json. A failing cell is recorded and the grid continues.
GridResult run_grid(const GridConfig& grid, const std::filesystem::path& out_dir);

// Same RunConfig with a single-generator workflow and one adapter.
RunConfig sa_config(RunConfig cfg);
TrainResult run_sa_baseline(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Evaluation-only: generator slots (workers for OrchWorkers) run the given
// adapter; every other role runs the zero-delta base.
double sa_transfer_eval(const AdapterDelta& sa_adapter, const WorkflowSpec& spec,
                        std::shared_ptr<const PolicyParams> params,
                        std::span<const TaskInstance> problems, const LengthCaps& caps,
                        double temperature, std::uint64_t seed);

}  // namespace rolelab
