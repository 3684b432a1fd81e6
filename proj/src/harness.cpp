#include "rolelab/harness.hpp"

#include <fstream>

#include "rolelab/config.hpp"

namespace rolelab {

using nlohmann::json;

namespace {

template <typename T, typename Parse>
std::vector<T> read_list(const json& j, const char* key, std::vector<T> fallback, Parse parse) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_array() || j[key].empty()) {
    throw ConfigError(std::string("'") + key + "' must be a non-empty list");
  }
  std::vector<T> out;
  for (const auto& v : j[key]) out.push_back(parse(v));
  return out;
}

CellResult from_train(CellResult c, const TrainResult& r) {
  c.ok = true;
  c.base_accuracy = r.base_accuracy;
  c.peak_validation_accuracy = r.peak_accuracy;
  c.step_at_peak = r.step_at_peak;
  c.terminal_accuracy = r.terminal_accuracy;
  c.amplitude = amplitude_summary(r.metrics);
  return c;
}

CellResult run_cell(CellResult c, const RunConfig& cfg) {
  try {
    const TrainResult r = train(cfg, c.run_dir);
    return from_train(std::move(c), r);
  } catch (const Error& e) {
    c.ok = false;
    c.error = e.what();
    std::filesystem::create_directories(c.run_dir);
    std::ofstream(c.run_dir / "error.txt") << c.error << '\n';
    return c;
  }
}

}  // namespace

GridConfig grid_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("grid config must be an object");
  for (const auto& [k, _] : j.items()) {
    if (k != "workflows" && k != "tasks" && k != "capacities" && k != "routings" &&
        k != "seeds" && k != "base") {
      throw ConfigError("unknown key '" + k + "' in grid config");
    }
  }
  GridConfig g;
  try {
    g.workflows = read_list<WorkflowKind>(j, "workflows", g.workflows, [](const json& v) {
      return parse_workflow_kind(v.get<std::string>());
    });
    g.tasks = read_list<TaskKind>(j, "tasks", g.tasks,
                                  [](const json& v) { return parse_task_kind(v.get<std::string>()); });
    g.capacities = read_list<int>(j, "capacities", g.capacities, [](const json& v) { return v.get<int>(); });
    g.routings = read_list<RoutingMode>(j, "routings", g.routings, [](const json& v) {
      return parse_routing_mode(v.get<std::string>());
    });
    g.seeds = read_list<std::uint64_t>(j, "seeds", g.seeds,
                                       [](const json& v) { return v.get<std::uint64_t>(); });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad grid axis: ") + e.what());
  }
  for (auto w : g.workflows) {
    if (w == WorkflowKind::kSingleAgent) {
      throw ConfigError("single_agent is the control, not a grid workflow");
    }
  }
  if (j.contains("base")) g.base = run_config_from_json(j["base"]);
  return g;
}

json to_json(const GridConfig& g) {
  json w = json::array(), t = json::array(), r = json::array();
  for (auto x : g.workflows) w.push_back(workflow_kind_name(x));
  for (auto x : g.tasks) t.push_back(task_kind_name(x));
  for (auto x : g.routings) r.push_back(routing_mode_name(x));
  return {{"workflows", w}, {"tasks", t},   {"capacities", g.capacities},
          {"routings", r},  {"seeds", g.seeds}, {"base", to_json(g.base)}};
}

json to_json(const CellResult& c) {
  json amp = json::object();
  for (const auto& [comp, s] : c.amplitude) amp[comp] = to_json(s);
  return {{"cell_id", c.cell_id},
          {"workflow", workflow_kind_name(c.workflow)},
          {"routing", routing_mode_name(c.routing)},
          {"task", task_kind_name(c.task)},
          {"capacity", c.capacity},
          {"seed", c.seed},
          {"run_dir", c.run_dir.string()},
          {"ok", c.ok},
          {"error", c.error},
          {"base_accuracy", c.base_accuracy},
          {"peak_validation_accuracy", c.peak_validation_accuracy},
          {"step_at_peak", c.step_at_peak},
          {"terminal_accuracy", c.terminal_accuracy},
          {"amplitude", amp},
          {"residual_vs_sa", c.residual_vs_sa ? json(*c.residual_vs_sa) : json(nullptr)}};
}

CellResult cell_from_json(const json& j) {
  CellResult c;
  c.cell_id = j.at("cell_id").get<std::string>();
  c.workflow = parse_workflow_kind(j.at("workflow").get<std::string>());
  c.routing = parse_routing_mode(j.at("routing").get<std::string>());
  c.task = parse_task_kind(j.at("task").get<std::string>());
  c.capacity = j.at("capacity").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.run_dir = j.value("run_dir", "");
  c.ok = j.value("ok", false);
  c.error = j.value("error", "");
  c.base_accuracy = j.value("base_accuracy", 0.0);
  c.peak_validation_accuracy = j.value("peak_validation_accuracy", 0.0);
  c.step_at_peak = j.value("step_at_peak", 0);
  c.terminal_accuracy = j.value("terminal_accuracy", 0.0);
  if (j.contains("amplitude")) {
    for (const auto& [comp, s] : j["amplitude"].items()) {
      c.amplitude[comp] = {s.value("max_chi2", 0.0), s.value("max_grad_norm", 0.0),
                           s.value("entropy_collapse_depth", 0.0)};
    }
  }
  if (j.contains("residual_vs_sa") && !j["residual_vs_sa"].is_null()) {
    c.residual_vs_sa = j["residual_vs_sa"].get<double>();
  }
  return c;
}

std::string cell_id(WorkflowKind w, RoutingMode r, TaskKind t, int capacity, std::uint64_t seed) {
  return std::string(workflow_kind_name(w)) + "-" + (r == RoutingMode::kShared ? "sp" : "ip") +
         "-" + std::string(task_kind_name(t)) + "-d" + std::to_string(capacity) + "-s" +
         std::to_string(seed);
}

std::string control_id(TaskKind t, int capacity, std::uint64_t seed) {
  return "sa-" + std::string(task_kind_name(t)) + "-d" + std::to_string(capacity) + "-s" +
         std::to_string(seed);
}

RunConfig sa_config(RunConfig cfg) {
  cfg.workflow = WorkflowKind::kSingleAgent;
  cfg.identical_generators = false;
  // One adapter either way; isolated names it after the generator role.
  cfg.train.routing = RoutingMode::kIsolated;
  return cfg;
}

TrainResult run_sa_baseline(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  return train(sa_config(cfg), out_dir);
}

GridResult run_grid(const GridConfig& grid, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir / "grid.json", to_json(grid));
  GridResult result;

  for (auto seed : grid.seeds) {
    for (auto task : grid.tasks) {
      for (int cap : grid.capacities) {
        RunConfig base = grid.base;
        base.seed = seed;
        base.task = task;
        base.capacity = cap;

        CellResult control;
        control.cell_id = control_id(task, cap, seed);
        control.workflow = WorkflowKind::kSingleAgent;
        control.routing = RoutingMode::kIsolated;
        control.task = task;
        control.capacity = cap;
        control.seed = seed;
        control.run_dir = out_dir / "controls" / control.cell_id;
        control = run_cell(std::move(control), sa_config(base));

        for (auto wf : grid.workflows) {
          for (auto routing : grid.routings) {
            RunConfig cfg = base;
            cfg.workflow = wf;
            cfg.train.routing = routing;
            CellResult cell;
            cell.cell_id = cell_id(wf, routing, task, cap, seed);
            cell.workflow = wf;
            cell.routing = routing;
            cell.task = task;
            cell.capacity = cap;
            cell.seed = seed;
            cell.run_dir = out_dir / "cells" / cell.cell_id;
            cell = run_cell(std::move(cell), cfg);
            if (cell.ok && control.ok) {
              cell.residual_vs_sa =
                  100.0 * (cell.peak_validation_accuracy - control.peak_validation_accuracy);
            }
            result.cells.push_back(std::move(cell));
          }
        }
        result.controls.push_back(std::move(control));
      }
    }
  }

  json cells = json::array(), controls = json::array();
  for (const auto& c : result.cells) cells.push_back(to_json(c));
  for (const auto& c : result.controls) controls.push_back(to_json(c));
  write_json_file(out_dir / "results.json", {{"cells", cells}, {"controls", controls}});
  return result;
}

double sa_transfer_eval(const AdapterDelta& sa_adapter, const WorkflowSpec& spec,
                        std::shared_ptr<const PolicyParams> params,
                        std::span<const TaskInstance> problems, const LengthCaps& caps,
                        double temperature, std::uint64_t seed) {
  const Role target = spec.kind == WorkflowKind::kOrchWorkers ? Role::kWorker : Role::kGenerator;
  if (!spec.has_role(target)) throw ConfigError("workflow has no generator-equivalent role");
  AdapterStore store = AdapterStore::for_workflow(std::move(params), spec, RoutingMode::kIsolated);
  if (!sa_adapter.delta.same_shape(store.at(std::string(role_name(target))).delta)) {
    throw ConfigError("single-agent adapter shape does not match the base policy");
  }
  store.put("sa", sa_adapter);
  Routing routing{RoutingMode::kIsolated, {{target, "sa"}}};
  return evaluate(spec, store, routing, problems, caps, temperature, seed).accuracy;
}

}  // namespace rolelab
