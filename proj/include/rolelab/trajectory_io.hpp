#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rolelab/tasks.hpp"
#include "rolelab/workflow.hpp"

namespace rolelab {

// One JSONL line per trajectory:
//   step, problem_id, workflow, routing,
//   task {kind, prompt, prompt_tokens, truth | tests},
//   turns [{role, slot, tokens, log_probs, entropies, train_log_probs,
//           finish_reason, text, token_count, context {task, visible}}],
//   final_answer (string|null), reward, reward_class
struct TrajectoryMeta {
  int step = 0;
  std::string workflow;
  std::string routing;
};

nlohmann::json task_to_json(const TaskInstance& task);
TaskInstance task_from_json(const nlohmann::json& j);

nlohmann::json trajectory_to_json(const Trajectory& traj, const TaskInstance& task,
                                  const TrajectoryMeta& meta);
Trajectory trajectory_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

// Parses every non-empty line; throws SchemaError carrying the line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace rolelab
