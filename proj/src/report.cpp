#include "rolelab/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

#include "rolelab/config.hpp"
#include "rolelab/diagnostics.hpp"
#include "rolelab/signatures.hpp"

namespace rolelab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunInfo {
  std::string id;
  fs::path dir;
  bool control = false;
  bool has_summary = false;
  std::string workflow;
  std::string routing;
  std::string task;
  int capacity = 0;
  std::uint64_t seed = 0;
  double base_accuracy = 0.0;
  double peak_accuracy = 0.0;
  int step_at_peak = 0;
  double terminal_accuracy = 0.0;
  std::optional<MetricSeries> metrics;
};

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

RunInfo load_run(const fs::path& dir, bool control, std::vector<std::string>& missing) {
  RunInfo r;
  r.id = dir.filename().string();
  r.dir = dir;
  r.control = control;
  if (fs::exists(dir / "summary.json")) {
    try {
      const json s = load_json_file(dir / "summary.json");
      r.workflow = s.at("workflow").get<std::string>();
      r.routing = s.at("routing").get<std::string>();
      r.task = s.at("task").get<std::string>();
      r.capacity = s.at("capacity").get<int>();
      r.seed = s.at("seed").get<std::uint64_t>();
      r.base_accuracy = s.at("base_accuracy").get<double>();
      r.peak_accuracy = s.at("peak_accuracy").get<double>();
      r.step_at_peak = s.at("step_at_peak").get<int>();
      r.terminal_accuracy = s.at("terminal_accuracy").get<double>();
      r.has_summary = true;
    } catch (const std::exception& e) {
      missing.push_back((dir / "summary.json").string() + ": " + e.what());
    }
  } else {
    missing.push_back((dir / "summary.json").string());
  }
  if (fs::exists(dir / "metrics.csv")) {
    try {
      r.metrics = MetricSeries::read_csv(dir / "metrics.csv");
    } catch (const std::exception& e) {
      missing.push_back((dir / "metrics.csv").string() + ": " + e.what());
    }
  } else {
    missing.push_back((dir / "metrics.csv").string());
  }
  return r;
}

std::vector<fs::path> subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool is_run_dir(const fs::path& dir) {
  return fs::exists(dir / "metrics.csv") || fs::exists(dir / "summary.json");
}

bool is_adapter_component(const std::string& c) { return c != "train" && c != "validation"; }

}  // namespace

ReportBundle emit_report(const fs::path& dir, const fs::path& out_dir) {
  ReportBundle bundle;
  std::vector<RunInfo> runs;
  if (!fs::is_directory(dir)) {
    bundle.missing.push_back(dir.string());
  } else if (is_run_dir(dir)) {
    runs.push_back(load_run(dir, false, bundle.missing));
  } else {
    bool any = false;
    for (const char* sub : {"cells", "controls"}) {
      if (!fs::is_directory(dir / sub)) continue;
      any = true;
      for (const auto& d : subdirs(dir / sub)) {
        runs.push_back(load_run(d, std::string(sub) == "controls", bundle.missing));
      }
    }
    if (!any && !fs::is_empty(dir)) bundle.missing.push_back((dir / "cells").string());
  }
  // A control appears as a run whose workflow is single_agent.
  for (auto& r : runs) r.control = r.control || r.workflow == "single_agent";
  bundle.runs = runs.size();

  fs::create_directories(out_dir);
  auto open = [&](const char* name, const char* header) {
    const fs::path p = out_dir / name;
    bundle.written.push_back(p);
    std::ofstream f(p);
    f << header << '\n';
    return f;
  };

  std::map<std::tuple<std::string, int, std::uint64_t>, const RunInfo*> controls;
  for (const auto& r : runs) {
    if (r.control && r.has_summary) controls[{r.task, r.capacity, r.seed}] = &r;
  }
  auto control_for = [&](const RunInfo& r) -> const RunInfo* {
    const auto it = controls.find({r.task, r.capacity, r.seed});
    return it == controls.end() ? nullptr : it->second;
  };

  {
    auto f = open("delta_vs_base.csv",
                  "run_id,workflow,routing,task,capacity,seed,base_accuracy,peak_accuracy,"
                  "step_at_peak,terminal_accuracy,delta_pp");
    for (const auto& r : runs) {
      if (!r.has_summary) continue;
      f << r.id << ',' << r.workflow << ',' << r.routing << ',' << r.task << ',' << r.capacity
        << ',' << r.seed << ',' << fmt(r.base_accuracy) << ',' << fmt(r.peak_accuracy) << ','
        << r.step_at_peak << ',' << fmt(r.terminal_accuracy) << ','
        << fmt(100.0 * (r.peak_accuracy - r.base_accuracy)) << '\n';
    }
  }

  {
    auto f = open("residuals.csv",
                  "run_id,workflow,routing,task,capacity,seed,peak_accuracy,sa_peak_accuracy,"
                  "residual_vs_sa_pp");
    for (const auto& r : runs) {
      if (!r.has_summary || r.control) continue;
      const RunInfo* c = control_for(r);
      f << r.id << ',' << r.workflow << ',' << r.routing << ',' << r.task << ',' << r.capacity
        << ',' << r.seed << ',' << fmt(r.peak_accuracy) << ','
        << (c ? fmt(c->peak_accuracy) : "") << ','
        << (c ? fmt(100.0 * (r.peak_accuracy - c->peak_accuracy)) : "") << '\n';
    }
  }

  std::size_t pairs = 0;
  {
    auto f = open("ip_vs_sp.csv",
                  "workflow,task,capacity,seed,sp_run,ip_run,sp_peak_accuracy,ip_peak_accuracy,"
                  "sp_residual_pp,ip_residual_pp");
    std::map<std::tuple<std::string, std::string, int, std::uint64_t>,
             std::pair<const RunInfo*, const RunInfo*>>
        matched;
    for (const auto& r : runs) {
      if (!r.has_summary || r.control) continue;
      auto& slot = matched[{r.workflow, r.task, r.capacity, r.seed}];
      (r.routing == "shared" ? slot.first : slot.second) = &r;
    }
    for (const auto& [key, p] : matched) {
      const auto& [sp, ip] = p;
      if (!sp || !ip) continue;
      ++pairs;
      const RunInfo* c = control_for(*sp);
      const auto& [wf, task, cap, seed] = key;
      f << wf << ',' << task << ',' << cap << ',' << seed << ',' << sp->id << ',' << ip->id << ','
        << fmt(sp->peak_accuracy) << ',' << fmt(ip->peak_accuracy) << ','
        << (c ? fmt(100.0 * (sp->peak_accuracy - c->peak_accuracy)) : "") << ','
        << (c ? fmt(100.0 * (ip->peak_accuracy - c->peak_accuracy)) : "") << '\n';
    }
  }

  {
    auto f = open("training_dynamics.csv", "run_id,step,component,metric,value");
    for (const auto& r : runs) {
      if (!r.metrics) continue;
      for (const auto& c : r.metrics->components()) {
        for (const auto& m : r.metrics->metrics(c)) {
          for (const auto& [step, v] : r.metrics->series(c, m)) {
            f << r.id << ',' << step << ',' << c << ',' << m << ',' << fmt(v) << '\n';
          }
        }
      }
    }
  }

  {
    auto f = open("amplitude.csv",
                  "run_id,routing,component,max_chi2,max_grad_norm,entropy_collapse_depth");
    for (const auto& r : runs) {
      if (!r.metrics) continue;
      for (const auto& [c, s] : amplitude_summary(*r.metrics)) {
        f << r.id << ',' << r.routing << ',' << c << ',' << fmt(s.max_chi2) << ','
          << fmt(s.max_grad_norm) << ',' << fmt(s.entropy_collapse_depth) << '\n';
      }
    }
  }

  {
    auto f = open("role_dynamics.csv",
                  "run_id,workflow,routing,component,chi2_ratio,chi2_peak_step,ppl_ratio,"
                  "grad_norm_ratio");
    for (const auto& r : runs) {
      if (!r.metrics) continue;
      for (const auto& d : role_dynamics(*r.metrics)) {
        if (!is_adapter_component(d.component)) continue;
        const std::string label = d.component == "shared" ? "shared policy" : d.component;
        f << r.id << ',' << r.workflow << ',' << r.routing << ',' << label << ','
          << fmt(d.chi2_ratio) << ',' << d.chi2_peak_step << ',' << fmt(d.ppl_ratio) << ','
          << fmt(d.grad_norm_ratio) << '\n';
      }
    }
  }

  {
    auto f = open("signatures.csv", "run_id,step,role,metric,value");
    for (const auto& r : runs) {
      const fs::path logs = r.dir / "trajectories";
      if (!fs::is_directory(logs)) {
        bundle.missing.push_back(logs.string());
        continue;
      }
      try {
        const auto report = build_report(logs);
        for (const auto& s : report.steps) {
          for (const auto& row : signature_rows(s)) {
            f << r.id << ',' << s.step << ',' << row.role << ',' << row.metric << ','
              << fmt(row.value) << '\n';
          }
        }
      } catch (const std::exception& e) {
        bundle.missing.push_back(logs.string() + ": " + e.what());
      }
    }
  }

  {
    const fs::path p = out_dir / "summary.txt";
    bundle.written.push_back(p);
    std::ofstream f(p);
    std::size_t n_controls = 0;
    for (const auto& r : runs) n_controls += r.control ? 1 : 0;
    f << "source: " << dir.string() << '\n';
    f << "runs: " << runs.size() << " (" << n_controls << " single-agent controls)\n";
    f << "matched SP/IP pairs: " << pairs << "\n\n";
    for (const auto& r : runs) {
      if (!r.has_summary) {
        f << r.id << ": no summary\n";
        continue;
      }
      f << r.id << ": base " << fmt(r.base_accuracy) << ", peak " << fmt(r.peak_accuracy)
        << " at step " << r.step_at_peak << ", terminal " << fmt(r.terminal_accuracy);
      if (!r.control) {
        if (const RunInfo* c = control_for(r)) {
          f << ", residual vs SA " << fmt(100.0 * (r.peak_accuracy - c->peak_accuracy)) << " pp";
        } else {
          f << ", residual vs SA undefined (no matched control)";
        }
      }
      f << '\n';
    }
    if (!bundle.missing.empty()) {
      f << "\nmissing inputs:\n";
      for (const auto& m : bundle.missing) f << "  " << m << '\n';
    }
  }
  return bundle;
}

}  // namespace rolelab
