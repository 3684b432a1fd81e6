#include "rolelab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace rolelab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Rows as written: the CSV keeps insertion order within a step.
struct Row {
  int step;
  std::string component;
  std::string metric;
  double value;
};

}  // namespace

double token_chi2(std::span<const double> rollout_log_probs,
                  std::span<const double> current_log_probs) {
  if (rollout_log_probs.size() != current_log_probs.size()) {
    throw Error("token_chi2: length mismatch");
  }
  if (rollout_log_probs.empty()) throw Error("token_chi2: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < rollout_log_probs.size(); ++i) {
    const double d = std::exp(current_log_probs[i] - rollout_log_probs[i]) - 1.0;
    sum += d * d;
  }
  return sum / static_cast<double>(rollout_log_probs.size());
}

double perplexity_from_log_probs(std::span<const double> log_probs) {
  if (log_probs.empty()) throw Error("perplexity: no tokens");
  double sum = 0.0;
  for (double lp : log_probs) sum += lp;
  return std::exp(-sum / static_cast<double>(log_probs.size()));
}

double role_perplexity(std::span<const Turn> turns, const PolicyParams& params,
                       const AdapterDelta& adapter) {
  std::vector<double> lps;
  for (const auto& turn : turns) {
    const ContextEncoder encoder(params.layout(), turn.role, turn.context);
    Token last = tok::kBos;
    for (std::size_t i = 0; i < turn.tokens.size(); ++i) {
      lps.push_back(log_prob(params, adapter, encoder.features_at(i, last), turn.tokens[i]));
      last = turn.tokens[i];
    }
  }
  if (lps.empty()) throw Error("role_perplexity: role emitted no tokens");
  return perplexity_from_log_probs(lps);
}

double entropy_collapse_depth(const Series& series) {
  if (series.empty()) throw Error("entropy_collapse_depth: empty series");
  double lo = series.front().second;
  for (const auto& [step, v] : series) lo = std::min(lo, v);
  return series.front().second - lo;
}

PeakRatio peak_over_first(const Series& series) {
  if (series.empty()) throw Error("peak_over_first: empty series");
  const double first = series.front().second;
  if (!(first > 0.0)) throw NumericError("peak_over_first: first value must be positive");
  PeakRatio best{1.0, series.front().first};
  double peak = first;
  for (const auto& [step, v] : series) {
    if (v > peak) {
      peak = v;
      best.step = step;
    }
  }
  best.ratio = peak / first;
  return best;
}

void MetricSeries::add(int step, const std::string& component, const std::string& metric,
                       double value) {
  auto& s = data_[component][metric];
  if (!s.empty() && step <= s.back().first) {
    throw Error("metric " + component + "/" + metric + ": steps must increase");
  }
  s.emplace_back(step, value);
}

bool MetricSeries::contains(const std::string& component, const std::string& metric) const {
  auto it = data_.find(component);
  return it != data_.end() && it->second.contains(metric);
}

const Series& MetricSeries::series(const std::string& component,
                                   const std::string& metric) const {
  auto it = data_.find(component);
  if (it == data_.end() || !it->second.contains(metric)) {
    throw Error("no series " + component + "/" + metric);
  }
  return it->second.at(metric);
}

std::vector<std::string> MetricSeries::components() const {
  std::vector<std::string> out;
  for (const auto& [c, _] : data_) out.push_back(c);
  return out;
}

std::vector<std::string> MetricSeries::metrics(const std::string& component) const {
  std::vector<std::string> out;
  if (auto it = data_.find(component); it != data_.end()) {
    for (const auto& [m, _] : it->second) out.push_back(m);
  }
  return out;
}

MetricSeries MetricSeries::window(int start, int end) const {
  MetricSeries out;
  for (const auto& [c, metrics] : data_) {
    for (const auto& [m, s] : metrics) {
      for (const auto& [step, v] : s) {
        if (step >= start && step <= end) out.add(step, c, m, v);
      }
    }
  }
  return out;
}

void MetricSeries::write_csv(const std::filesystem::path& path) const {
  std::vector<Row> rows;
  for (const auto& [c, metrics] : data_) {
    for (const auto& [m, s] : metrics) {
      for (const auto& [step, v] : s) rows.push_back({step, c, m, v});
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.step < b.step; });
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,component,metric,value\n";
  out.precision(17);
  for (const auto& r : rows) out << r.step << ',' << r.component << ',' << r.metric << ',' << r.value << '\n';
}

MetricSeries MetricSeries::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  MetricSeries out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::stringstream ss(line);
    std::string step, comp, metric, value;
    if (!std::getline(ss, step, ',') || !std::getline(ss, comp, ',') ||
        !std::getline(ss, metric, ',') || !std::getline(ss, value)) {
      throw SchemaError("malformed metrics row", lineno);
    }
    try {
      out.add(std::stoi(step), comp, metric, std::stod(value));
    } catch (const std::invalid_argument&) {
      throw SchemaError("non-numeric metrics field", lineno);
    }
  }
  return out;
}

std::map<std::string, AmplitudeStats> amplitude_summary(const MetricSeries& run) {
  std::map<std::string, AmplitudeStats> out;
  auto max_of = [](const Series& s) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& [_, v] : s) m = std::max(m, v);
    return m;
  };
  for (const auto& c : run.components()) {
    if (!run.contains(c, "chi2") || !run.contains(c, "grad_norm") || !run.contains(c, "entropy")) {
      continue;
    }
    out[c] = {max_of(run.series(c, "chi2")), max_of(run.series(c, "grad_norm")),
              entropy_collapse_depth(run.series(c, "entropy"))};
  }
  return out;
}

std::vector<DynamicsRow> role_dynamics(const MetricSeries& run) {
  auto ratio = [](const Series& s) -> PeakRatio {
    if (s.empty() || !(s.front().second > 0.0)) return {kNaN, s.empty() ? 0 : s.front().first};
    return peak_over_first(s);
  };
  std::vector<DynamicsRow> rows;
  for (const auto& c : run.components()) {
    if (!run.contains(c, "chi2") || !run.contains(c, "perplexity") ||
        !run.contains(c, "grad_norm")) {
      continue;
    }
    const auto chi = ratio(run.series(c, "chi2"));
    rows.push_back({c, chi.ratio, chi.step, ratio(run.series(c, "perplexity")).ratio,
                    ratio(run.series(c, "grad_norm")).ratio});
  }
  return rows;
}

nlohmann::json to_json(const AmplitudeStats& s) {
  return {{"max_chi2", s.max_chi2},
          {"max_grad_norm", s.max_grad_norm},
          {"entropy_collapse_depth", s.entropy_collapse_depth}};
}

nlohmann::json to_json(const DynamicsRow& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"component", r.component},
          {"chi2_ratio", num(r.chi2_ratio)},
          {"chi2_peak_step", r.chi2_peak_step},
          {"ppl_ratio", num(r.ppl_ratio)},
          {"grad_norm_ratio", num(r.grad_norm_ratio)}};
}

}  // namespace rolelab
