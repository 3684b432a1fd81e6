#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rolelab/config.hpp"
#include "rolelab/diagnostics.hpp"
#include "rolelab/grpo.hpp"
#include "rolelab/harness.hpp"
#include "rolelab/mechanisms.hpp"
#include "rolelab/report.hpp"
#include "rolelab/signatures.hpp"
#include "rolelab/tasks.hpp"

namespace py = pybind11;
using namespace rolelab;
using nlohmann::json;

// Structured values cross the boundary as JSON text; the Python side
// decodes them.

namespace {

json summary(const TrainResult& r) {
  json v = json::array();
  for (const auto& p : r.validation) v.push_back({{"step", p.step}, {"accuracy", p.accuracy}});
  return {{"run_dir", r.run_dir.string()},
          {"base_accuracy", r.base_accuracy},
          {"peak_accuracy", r.peak_accuracy},
          {"step_at_peak", r.step_at_peak},
          {"terminal_accuracy", r.terminal_accuracy},
          {"validation", v}};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  // Translators run newest first, so the subclass goes last.
  const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def("default_config", [](const std::string& preset) {
    RunConfig cfg;
    if (!preset.empty()) apply_preset(cfg, preset);
    return to_json(cfg).dump();
  }, py::arg("preset") = "");
  m.def("normalize_config", [](const std::string& text) {
    return to_json(run_config_from_json(json::parse(text))).dump();
  });

  m.def("train", [](const std::string& config, const std::string& out_dir) {
    const RunConfig cfg = run_config_from_json(json::parse(config));
    py::gil_scoped_release release;
    return summary(train(cfg, out_dir)).dump();
  }, py::arg("config"), py::arg("out_dir") = "");
  m.def("sa_baseline", [](const std::string& config, const std::string& out_dir) {
    const RunConfig cfg = run_config_from_json(json::parse(config));
    py::gil_scoped_release release;
    return summary(run_sa_baseline(cfg, out_dir)).dump();
  }, py::arg("config"), py::arg("out_dir") = "");
  m.def("run_grid", [](const std::string& config, const std::string& out_dir) {
    const GridConfig g = grid_config_from_json(json::parse(config));
    py::gil_scoped_release release;
    const auto r = run_grid(g, out_dir);
    json cells = json::array(), controls = json::array();
    for (const auto& c : r.cells) cells.push_back(to_json(c));
    for (const auto& c : r.controls) controls.push_back(to_json(c));
    return json{{"cells", cells}, {"controls", controls}}.dump();
  });

  m.def("mechanism_a", [](const std::string& config, const std::string& out_dir) {
    const auto cfg = mechanism_a_config_from_json(json::parse(config));
    py::gil_scoped_release release;
    return to_json(mechanism_a_experiment(cfg, out_dir)).dump();
  }, py::arg("config") = "{}", py::arg("out_dir") = "");
  m.def("mechanism_b", [](const std::string& config, const std::string& out_dir) {
    const auto cfg = mechanism_b_config_from_json(json::parse(config));
    py::gil_scoped_release release;
    return to_json(mechanism_b_experiment(cfg, out_dir)).dump();
  }, py::arg("config") = "{}", py::arg("out_dir") = "");

  m.def("signatures", [](const std::string& log_path) {
    return to_json(build_report(log_path)).dump();
  });
  m.def("emit_report", [](const std::string& dir, const std::string& out_dir) {
    const auto b = emit_report(dir, out_dir);
    std::vector<std::string> written;
    for (const auto& p : b.written) written.push_back(p.string());
    return json{{"runs", b.runs}, {"written", written}, {"missing", b.missing}}.dump();
  });

  m.def("token_chi2", [](const std::vector<double>& rollout, const std::vector<double>& current) {
    return token_chi2(rollout, current);
  });
  m.def("perplexity", [](const std::vector<double>& lps) { return perplexity_from_log_probs(lps); });
  m.def("entropy_collapse_depth", [](const Series& s) { return entropy_collapse_depth(s); });
  m.def("peak_over_first", [](const Series& s) {
    const auto p = peak_over_first(s);
    return py::make_tuple(p.ratio, p.step);
  });
  m.def("group_advantages", [](const std::vector<double>& rewards, double eps) {
    return group_advantages(rewards, eps);
  }, py::arg("rewards"), py::arg("std_epsilon") = 1e-6);
  m.def("ngram_jaccard", [](const std::string& a, const std::string& b, int n) {
    return ngram_jaccard(a, b, n);
  }, py::arg("a"), py::arg("b"), py::arg("n") = 3);
  m.def("parse_boxed", [](const std::string& text) { return parse_boxed(text); });
}
