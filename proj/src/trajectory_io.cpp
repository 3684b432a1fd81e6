#include "rolelab/trajectory_io.hpp"

#include <fstream>

namespace rolelab {

using nlohmann::json;

json task_to_json(const TaskInstance& task) {
  json j = {
      {"kind", task_kind_name(task.kind)},
      {"id", task.id},
      {"prompt", detokenize(task.prompt)},
      {"prompt_tokens", task.prompt},
      {"modulus", task.modulus},
  };
  if (task.kind == TaskKind::kMath) {
    j["truth"] = task.truth;
  } else {
    json tests = json::array();
    for (const auto& t : task.tests) tests.push_back({t.input, t.expected});
    j["tests"] = tests;
  }
  return j;
}

TaskInstance task_from_json(const json& j) {
  TaskInstance t;
  t.kind = parse_task_kind(j.at("kind").get<std::string>());
  t.id = j.value("id", "");
  t.prompt = j.at("prompt_tokens").get<std::vector<Token>>();
  t.modulus = j.value("modulus", 10);
  if (t.kind == TaskKind::kMath) {
    t.truth = j.at("truth").get<long>();
  } else {
    for (const auto& p : j.at("tests")) t.tests.push_back({p.at(0).get<long>(), p.at(1).get<long>()});
  }
  return t;
}

json trajectory_to_json(const Trajectory& traj, const TaskInstance& task,
                        const TrajectoryMeta& meta) {
  json turns = json::array();
  for (const auto& turn : traj.turns) {
    turns.push_back({
        {"role", role_name(turn.role)},
        {"slot", turn.slot},
        {"tokens", turn.tokens},
        {"log_probs", turn.rollout_log_probs},
        {"entropies", turn.rollout_entropies},
        {"train_log_probs", turn.train_log_probs},
        {"finish_reason", finish_reason_name(turn.finish)},
        {"text", turn.text()},
        {"token_count", turn.tokens.size()},
        {"context", {{"task", turn.context.task}, {"visible", turn.context.visible}}},
    });
  }
  return {
      {"step", meta.step},
      {"problem_id", traj.problem_id},
      {"workflow", meta.workflow},
      {"routing", meta.routing},
      {"task", task_to_json(task)},
      {"turns", turns},
      {"final_answer", traj.final_answer ? json(*traj.final_answer) : json(nullptr)},
      {"reward", traj.reward},
      {"reward_class", reward_class_name(traj.reward_class)},
  };
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory traj;
  traj.problem_id = j.at("problem_id").get<std::string>();
  for (const auto& jt : j.at("turns")) {
    Turn t;
    t.role = parse_role(jt.at("role").get<std::string>());
    t.slot = jt.at("slot").get<int>();
    t.tokens = jt.at("tokens").get<std::vector<Token>>();
    t.rollout_log_probs = jt.at("log_probs").get<std::vector<double>>();
    t.rollout_entropies = jt.at("entropies").get<std::vector<double>>();
    t.train_log_probs = jt.value("train_log_probs", std::vector<double>{});
    t.finish = jt.at("finish_reason").get<std::string>() == "length" ? FinishReason::kLength
                                                                     : FinishReason::kStop;
    if (jt.contains("context")) {
      t.context.task = jt["context"].at("task").get<std::vector<Token>>();
      t.context.visible = jt["context"].at("visible").get<std::vector<std::vector<Token>>>();
    }
    traj.turns.push_back(std::move(t));
  }
  if (j.contains("final_answer") && !j["final_answer"].is_null()) {
    traj.final_answer = j["final_answer"].get<std::string>();
  }
  traj.reward = j.value("reward", 0.0);
  const std::string cls = j.value("reward_class", "malformed");
  for (auto c : {RewardClass::kCorrect, RewardClass::kParsedWrong, RewardClass::kMalformed,
                 RewardClass::kPartialPass}) {
    if (reward_class_name(c) == cls) traj.reward_class = c;
  }
  return traj;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw SchemaError(path.string() + ": invalid JSON: " + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace rolelab
