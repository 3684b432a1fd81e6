#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "rolelab/config.hpp"
#include "rolelab/harness.hpp"
#include "rolelab/mechanisms.hpp"
#include "rolelab/report.hpp"
#include "rolelab/signatures.hpp"

namespace fs = std::filesystem;
using namespace rolelab;

namespace {

nlohmann::json config_or_empty(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : load_json_file(path);
}

RunConfig load_run_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = run_config_from_json(config_or_empty(path));
  if (seed) cfg.seed = *seed;
  return cfg;
}

void print_train(const TrainResult& r) {
  std::cout << "base " << r.base_accuracy << "  peak " << r.peak_accuracy << " @" << r.step_at_peak
            << "  terminal " << r.terminal_accuracy << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"role-based multi-agent RL lab"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("-c,--config", config, "JSON config file")->check(CLI::ExistingFile);
    auto* o = sub->add_option("-o,--out", out, "output directory");
    if (out_required) o->required();
    sub->add_option("-s,--seed", seed, "override the config seed");
  };

  auto* run = app.add_subcommand("run", "train one workflow");
  common(run, true);
  auto* grid = app.add_subcommand("grid", "run a workflow x task x capacity x routing grid");
  common(grid, true);
  auto* sa = app.add_subcommand("sa-baseline", "train the matched single-agent control");
  common(sa, true);
  auto* mech_a = app.add_subcommand("mechanism-a", "gradient amplification experiment");
  common(mech_a, true);
  auto* mech_b = app.add_subcommand("mechanism-b", "shared-policy capture experiment");
  common(mech_b, true);

  std::string log_path;
  auto* sig = app.add_subcommand("signatures", "behavioral signatures of a trajectory log");
  sig->add_option("-l,--log", log_path, "jsonl file or directory")->required()->check(CLI::ExistingPath);
  sig->add_option("-o,--out", out, "output directory")->required();

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "emit the report bundle for a run or grid");
  rep->add_option("dir", report_dir, "run or grid directory")->required();
  rep->add_option("-o,--out", out, "output directory (default <dir>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      print_train(train(load_run_config(config, seed), out));
    } else if (*sa) {
      print_train(run_sa_baseline(load_run_config(config, seed), out));
    } else if (*grid) {
      GridConfig g = grid_config_from_json(config_or_empty(config));
      if (seed) g.seeds = {*seed};
      const auto result = run_grid(g, out);
      int failed = 0;
      for (const auto& c : result.controls) {
        std::cout << c.cell_id << "  peak " << c.peak_validation_accuracy << '\n';
      }
      for (const auto& c : result.cells) {
        if (!c.ok) {
          ++failed;
          std::cout << c.cell_id << "  FAILED: " << c.error << '\n';
          continue;
        }
        std::cout << c.cell_id << "  peak " << c.peak_validation_accuracy;
        if (c.residual_vs_sa) std::cout << "  residual " << *c.residual_vs_sa << " pp";
        std::cout << '\n';
      }
      if (failed > 0) return 3;
    } else if (*mech_a) {
      const auto j = config_or_empty(config);
      MechanismAConfig cfg = mechanism_a_config_from_json(j);
      if (seed) cfg.run.seed = *seed;
      fs::create_directories(out);
      const auto r = mechanism_a_experiment(cfg, out);
      std::cout << to_json(r).dump(2) << '\n';
    } else if (*mech_b) {
      MechanismBConfig cfg = mechanism_b_config_from_json(config_or_empty(config));
      if (seed) cfg.seed = *seed;
      fs::create_directories(out);
      const auto r = mechanism_b_experiment(cfg, out);
      std::cout << to_json(r).dump(2) << '\n';
    } else if (*sig) {
      const auto report = build_report(log_path);
      write_report(report, out);
      std::cout << report.steps.size() << " logged steps -> " << out << '\n';
    } else if (*rep) {
      const fs::path dest = out.empty() ? fs::path(report_dir) / "report" : fs::path(out);
      const auto b = emit_report(report_dir, dest);
      std::cout << b.runs << " runs, " << b.written.size() << " files -> " << dest.string() << '\n';
      for (const auto& m : b.missing) std::cerr << "missing: " << m << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
