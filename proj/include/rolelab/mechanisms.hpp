#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rolelab/grpo.hpp"

namespace rolelab {

struct ConfidenceInterval {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
};

// Percentile bootstrap of the mean.
ConfidenceInterval bootstrap_mean_ci(std::span<const double> values, double confidence,
                                     int resamples, std::uint64_t seed);

// ||sum_k g_k|| / sqrt(mean_k ||g_k||^2): 3 for identical slot gradients,
// about sqrt(3) for independent zero-mean ones. NaN if every slot is zero.
double amplification_ratio(std::span<const Matrix> slot_grads);

// Per-slot generator gradients on the full batch with the current adapter.
std::vector<Matrix> slot_gradients(std::span<const SampleView> samples, Role role, int slots,
                                   const PolicyParams& params, const AdapterDelta& adapter,
                                   const SurrogateOptions& opts);

// Same, but each slot sees the batch advantages under its own random
// permutation, which removes the within-trajectory co-variation.
std::vector<Matrix> shuffled_slot_gradients(std::span<const SampleView> samples, Role role,
                                            int slots, const PolicyParams& params,
                                            const AdapterDelta& adapter,
                                            const SurrogateOptions& opts, Rng& rng);

struct MechanismAConfig {
  RunConfig run;             // Voting, isolated routing
  int degenerate_steps = 30;  // identical-generators run length
  double confidence = 0.99;
  int bootstrap_resamples = 4000;
};

MechanismAConfig default_mechanism_a();

struct AmplificationStep {
  int step = 0;
  double standard = 0.0;
  double null_ratio = 0.0;
  double generator_grad_norm = 0.0;
};

struct MechanismAReport {
  std::vector<AmplificationStep> steps;
  std::vector<double> degenerate;  // one ratio per step of the identical run
  double standard_mean = 0.0;
  double null_mean = 0.0;
  ConfidenceInterval difference;  // paired, standard - null
  std::vector<DynamicsRow> voting_dynamics;
  std::vector<DynamicsRow> single_agent_dynamics;
  double generator_chi2_ratio = 0.0;
  double aggregator_chi2_ratio = 0.0;
  double voting_peak_accuracy = 0.0;
  double single_agent_peak_accuracy = 0.0;
  // Mean generator grad norm of the Voting run over that of the matched
  // single-agent run.
  double grad_norm_vs_single_agent = 0.0;
};

MechanismAReport mechanism_a_experiment(const MechanismAConfig& cfg,
                                        const std::filesystem::path& out_dir = {});

// Two-role probe on a shared adapter: `dominant_slots` worker turns of
// `dominant_len` tokens and `minority_slots` synthesizer turns of
// `minority_len` tokens, all fixed-length and conditioned on the task only.
// The reward is the mean per-turn math reward, so neither role is favored.
struct CaptureProbe {
  std::string name;
  int dominant_slots = 1;
  int dominant_len = 36;
  int minority_slots = 1;
  int minority_len = 4;
};

struct MechanismBConfig {
  int capacity = 256;
  int steps = 200;
  int problems_per_step = 16;
  std::uint64_t seed = 0;
  TrainConfig train;  // routing forced to shared
  double confidence = 0.95;
  int bootstrap_resamples = 4000;
  std::vector<CaptureProbe> probes;
};

MechanismBConfig default_mechanism_b();

struct CaptureStep {
  int step = 0;
  double cos_dominant = 0.0;
  double cos_minority = 0.0;
  bool defined = false;           // both role gradients nonzero
  bool dominant_defined = false;  // dominant-role gradient nonzero
};

struct CaptureSeries {
  CaptureProbe probe;
  std::vector<CaptureStep> steps;
  double dominant_win_rate = 0.0;  // over defined steps
  ConfidenceInterval gap;          // cos_dominant - cos_minority
  double min_cos_dominant = 0.0;
  double max_cos_dominant = 0.0;
};

CaptureSeries run_capture_probe(const CaptureProbe& probe, const MechanismBConfig& cfg);

struct MechanismBReport {
  std::vector<CaptureSeries> series;
  const CaptureSeries* find(const std::string& name) const;
};

MechanismBReport mechanism_b_experiment(const MechanismBConfig& cfg,
                                        const std::filesystem::path& out_dir = {});

MechanismAConfig mechanism_a_config_from_json(const nlohmann::json& j);
MechanismBConfig mechanism_b_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MechanismAReport& r);
nlohmann::json to_json(const MechanismBReport& r);

}  // namespace rolelab
