#include "rolelab/config.hpp"

#include <fstream>
#include <set>

namespace rolelab {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void apply_preset(RunConfig& cfg, std::string_view preset) {
  if (preset == "reference") {
    cfg.train = TrainConfig{};
    cfg.steps = 300;
    return;
  }
  if (preset == "desk") {
    cfg.train = TrainConfig{};
    cfg.train.lr = 2e-2;
    cfg.train.problems_per_step = 16;
    cfg.train.validation_interval = 10;
    cfg.steps = 300;
    return;
  }
  throw ConfigError("unknown preset '" + std::string(preset) + "'");
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown(j,
                 {"lr", "warmup_steps", "schedule", "min_lr_ratio", "grad_clip", "clip_high",
                  "clip_low", "group_n", "minibatch", "epochs", "problems_per_step",
                  "temperature", "validation_interval", "checkpoint_interval", "routing",
                  "std_epsilon", "adam_beta1", "adam_beta2", "adam_eps", "weight_decay",
                  "loss_agg", "drop_zero_variance", "minibatch_unit"},
                 "train");
  read(j, "lr", c.lr);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "schedule", c.schedule);
  read(j, "min_lr_ratio", c.min_lr_ratio);
  read(j, "grad_clip", c.grad_clip);
  read(j, "clip_high", c.clip_high);
  read(j, "clip_low", c.clip_low);
  read(j, "group_n", c.group_n);
  read(j, "minibatch", c.minibatch);
  read(j, "epochs", c.epochs);
  read(j, "problems_per_step", c.problems_per_step);
  read(j, "temperature", c.temperature);
  read(j, "validation_interval", c.validation_interval);
  read(j, "checkpoint_interval", c.checkpoint_interval);
  if (j.contains("routing")) c.routing = parse_routing_mode(j["routing"].get<std::string>());
  read(j, "std_epsilon", c.std_epsilon);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "weight_decay", c.weight_decay);
  if (j.contains("loss_agg")) c.loss_agg = parse_loss_aggregation(j["loss_agg"].get<std::string>());
  if (j.contains("minibatch_unit")) {
    c.minibatch_unit = parse_minibatch_unit(j["minibatch_unit"].get<std::string>());
  }
  read(j, "drop_zero_variance", c.drop_zero_variance);
  return c;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  reject_unknown(j,
                 {"preset", "workflow", "routing", "task", "difficulty", "modulus", "capacity",
                  "prior_strength", "init_scale", "response_cap", "per_role_caps",
                  "fixed_length", "revision_cap", "voting_candidates", "workers", "steps",
                  "seed", "validation_problems", "trajectory_log_interval",
                  "trajectory_log_max", "metrics_start_step", "identical_generators", "train"},
                 "run config");
  try {
    if (j.contains("preset")) apply_preset(c, j["preset"].get<std::string>());
    if (j.contains("workflow")) c.workflow = parse_workflow_kind(j["workflow"].get<std::string>());
    if (j.contains("task")) c.task = parse_task_kind(j["task"].get<std::string>());
    read(j, "difficulty", c.difficulty);
    read(j, "modulus", c.modulus);
    read(j, "capacity", c.capacity);
    read(j, "prior_strength", c.prior_strength);
    read(j, "init_scale", c.init_scale);
    read(j, "response_cap", c.caps.response);
    if (j.contains("per_role_caps")) {
      for (const auto& [role, cap] : j["per_role_caps"].items()) {
        c.caps.per_role[parse_role(role)] = cap.get<int>();
      }
    }
    read(j, "fixed_length", c.caps.fixed_length);
    read(j, "revision_cap", c.workflow_config.revision_cap);
    read(j, "voting_candidates", c.workflow_config.voting_candidates);
    read(j, "workers", c.workflow_config.workers);
    read(j, "steps", c.steps);
    read(j, "seed", c.seed);
    read(j, "validation_problems", c.validation_problems);
    read(j, "trajectory_log_interval", c.trajectory_log_interval);
    read(j, "trajectory_log_max", c.trajectory_log_max);
    read(j, "metrics_start_step", c.metrics_start_step);
    read(j, "identical_generators", c.identical_generators);
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
    // Top-level routing wins over train.routing: it is the grid axis.
    if (j.contains("routing")) c.train.routing = parse_routing_mode(j["routing"].get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run config: ") + e.what());
  }
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"schedule", c.schedule},
          {"min_lr_ratio", c.min_lr_ratio},
          {"grad_clip", c.grad_clip},
          {"clip_high", c.clip_high},
          {"clip_low", c.clip_low},
          {"group_n", c.group_n},
          {"minibatch", c.minibatch},
          {"epochs", c.epochs},
          {"problems_per_step", c.problems_per_step},
          {"temperature", c.temperature},
          {"validation_interval", c.validation_interval},
          {"checkpoint_interval", c.checkpoint_interval},
          {"routing", routing_mode_name(c.routing)},
          {"std_epsilon", c.std_epsilon},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"loss_agg", loss_aggregation_name(c.loss_agg)},
          {"minibatch_unit", minibatch_unit_name(c.minibatch_unit)},
          {"drop_zero_variance", c.drop_zero_variance}};
}

json to_json(const RunConfig& c) {
  json caps = json::object();
  for (const auto& [role, cap] : c.caps.per_role) caps[std::string(role_name(role))] = cap;
  return {{"workflow", workflow_kind_name(c.workflow)},
          {"routing", routing_mode_name(c.train.routing)},
          {"task", task_kind_name(c.task)},
          {"difficulty", c.difficulty},
          {"modulus", c.modulus},
          {"capacity", c.capacity},
          {"prior_strength", c.prior_strength},
          {"init_scale", c.init_scale},
          {"response_cap", c.caps.response},
          {"per_role_caps", caps},
          {"fixed_length", c.caps.fixed_length},
          {"revision_cap", c.workflow_config.revision_cap},
          {"voting_candidates", c.workflow_config.voting_candidates},
          {"workers", c.workflow_config.workers},
          {"steps", c.steps},
          {"seed", c.seed},
          {"validation_problems", c.validation_problems},
          {"trajectory_log_interval", c.trajectory_log_interval},
          {"trajectory_log_max", c.trajectory_log_max},
          {"metrics_start_step", c.metrics_start_step},
          {"identical_generators", c.identical_generators},
          {"train", to_json(c.train)}};
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace rolelab
