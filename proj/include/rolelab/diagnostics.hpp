#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rolelab/policy.hpp"
#include "rolelab/workflow.hpp"

namespace rolelab {

// Mean over tokens of (exp(current - rollout) - 1)^2. Throws Error on empty or
// mismatched input.
double token_chi2(std::span<const double> rollout_log_probs,
                  std::span<const double> current_log_probs);

// exp(-mean log-prob); throws Error on empty input.
double perplexity_from_log_probs(std::span<const double> log_probs);

// Temperature-1 perplexity of every token in `turns` under `adapter`.
double role_perplexity(std::span<const Turn> turns, const PolicyParams& params,
                       const AdapterDelta& adapter);

using Series = std::vector<std::pair<int, double>>;

// first - min over the series.
double entropy_collapse_depth(const Series& series);

struct PeakRatio {
  double ratio = 0.0;
  int step = 0;
};

// max / first, with the earliest step attaining the max. Throws NumericError
// when the first value is not positive.
PeakRatio peak_over_first(const Series& series);

// Per (component, metric) step series. Steps must be strictly increasing
// within each series.
class MetricSeries {
 public:
  void add(int step, const std::string& component, const std::string& metric, double value);

  bool contains(const std::string& component, const std::string& metric) const;
  const Series& series(const std::string& component, const std::string& metric) const;
  std::vector<std::string> components() const;
  std::vector<std::string> metrics(const std::string& component) const;
  bool empty() const { return data_.empty(); }

  // Only points with start <= step <= end.
  MetricSeries window(int start, int end) const;

  // step,component,metric,value rows ordered by step then insertion.
  void write_csv(const std::filesystem::path& path) const;
  static MetricSeries read_csv(const std::filesystem::path& path);

 private:
  std::map<std::string, std::map<std::string, Series>> data_;
};

struct AmplitudeStats {
  double max_chi2 = 0.0;
  double max_grad_norm = 0.0;
  double entropy_collapse_depth = 0.0;
};

// One entry per component that logs chi2, grad_norm and entropy.
std::map<std::string, AmplitudeStats> amplitude_summary(const MetricSeries& run);

// Peak-over-first ratios for chi2, perplexity and grad_norm, one row per
// component. Ratios are NaN when the first value is not positive.
struct DynamicsRow {
  std::string component;
  double chi2_ratio = 0.0;
  int chi2_peak_step = 0;
  double ppl_ratio = 0.0;
  double grad_norm_ratio = 0.0;
};

std::vector<DynamicsRow> role_dynamics(const MetricSeries& run);

nlohmann::json to_json(const AmplitudeStats& s);
nlohmann::json to_json(const DynamicsRow& r);

}  // namespace rolelab
