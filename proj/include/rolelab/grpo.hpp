#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rolelab/diagnostics.hpp"
#include "rolelab/tasks.hpp"
#include "rolelab/workflow.hpp"

namespace rolelab {

enum class LossAggregation {
  // Token-mean over the whole trajectory (every role's tokens count in the
  // denominator), then mean over trajectories. Role masks only remove terms,
  // so per-role gradients add up to the shared gradient.
  kTrajectoryTokenMean,
  // Token-mean inside each role turn, summed over the turns of a trajectory,
  // then mean over trajectories.
  kTurnTokenMean,
};

std::string_view loss_aggregation_name(LossAggregation a);
LossAggregation parse_loss_aggregation(std::string_view name);

// What `minibatch` counts.
enum class MinibatchUnit {
  // Whole trajectories; every adapter gets the same number of optimizer steps.
  kTrajectory,
  // Turns of the adapter's own roles, so a role with three slots per episode
  // takes three times the optimizer steps of a single-slot role.
  kRoleTurn,
};

std::string_view minibatch_unit_name(MinibatchUnit u);
MinibatchUnit parse_minibatch_unit(std::string_view name);

struct TrainConfig {
  double lr = 2e-5;
  int warmup_steps = 15;
  std::string schedule = "cosine";
  double min_lr_ratio = 0.0;
  double grad_clip = 1.0;
  double clip_high = 0.28;
  double clip_low = 0.2;
  int group_n = 8;
  int minibatch = 64;  // samples per optimizer step, see minibatch_unit
  MinibatchUnit minibatch_unit = MinibatchUnit::kTrajectory;
  int epochs = 1;
  int problems_per_step = 64;
  double temperature = 0.7;
  int validation_interval = 10;
  int checkpoint_interval = 5;
  RoutingMode routing = RoutingMode::kIsolated;
  double std_epsilon = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  LossAggregation loss_agg = LossAggregation::kTrajectoryTokenMean;
  bool drop_zero_variance = false;
};

struct RunConfig {
  WorkflowKind workflow = WorkflowKind::kVoting;
  WorkflowConfig workflow_config;
  TaskKind task = TaskKind::kMath;
  int difficulty = 1;
  int modulus = 10;
  int capacity = 256;  // feature dimension D
  double prior_strength = 1.0;
  double init_scale = 0.1;
  LengthCaps caps;
  int steps = 300;
  std::uint64_t seed = 0;
  int validation_problems = 256;
  int trajectory_log_interval = 10;
  int trajectory_log_max = 64;
  int metrics_start_step = 0;
  bool identical_generators = false;
  TrainConfig train;
};

struct GroupBatch {
  TaskInstance problem;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

GroupBatch collect_group(const WorkflowSpec& spec, const AdapterStore& store,
                         const Routing& routing, const TaskInstance& problem, int n,
                         const LengthCaps& caps, double temperature, Rng& rng,
                         const EpisodeOptions& options = {});

// (r - mean) / max(std, eps) with population std; all zeros when std < eps.
std::vector<double> group_advantages(std::span<const double> rewards, double std_epsilon);

// Fills batch.advantages from batch.rewards.
void assign_advantages(GroupBatch& batch, double std_epsilon);

struct SampleView {
  const Trajectory* trajectory = nullptr;
  double advantage = 0.0;
};

// Flattens groups into per-trajectory samples in group order.
std::vector<SampleView> flatten(std::span<const GroupBatch> batches);

struct SurrogateOptions {
  double clip_low = 0.2;
  double clip_high = 0.28;
  double temperature = 0.7;  // for the chi2 / ratio diagnostics
  LossAggregation loss_agg = LossAggregation::kTrajectoryTokenMean;
  // Restrict to one slot index (-1 = all slots of the masked roles).
  int slot = -1;
};

struct MaskedGradient {
  Matrix grad;  // d loss / d delta, loss = -clipped surrogate
  double loss = 0.0;
  std::size_t tokens = 0;
  bool empty = true;  // no masked token in the batch
  // Diagnostics over masked tokens.
  double chi2_sum = 0.0;  // sum of (rho_T - 1)^2 at the sampling temperature
  double max_ratio = 0.0;
  double log_prob_sum = 0.0;  // current, temperature 1
  double entropy_sum = 0.0;   // rollout entropies
  std::size_t clipped = 0;
};

// Gradient of the clipped surrogate restricted to tokens emitted by `roles`.
// Ratios use the stored temperature-1 rollout log-probs; the loss is averaged
// over every trajectory in `samples`.
MaskedGradient role_masked_gradient(std::span<const SampleView> samples,
                                    std::span<const Role> roles, const PolicyParams& params,
                                    const AdapterDelta& adapter, const SurrogateOptions& opts);

// One role turn as a training sample.
struct TurnSample {
  const Trajectory* trajectory = nullptr;
  std::size_t turn = 0;
  double advantage = 0.0;
};

// Turns of `roles` in sample order, then turn order.
std::vector<TurnSample> role_turns(std::span<const SampleView> samples, std::span<const Role> roles);

// Clipped-surrogate gradient averaged over turn samples. Token weights use
// the same aggregation as role_masked_gradient, with the turn count as the
// batch size.
MaskedGradient turn_masked_gradient(std::span<const TurnSample> turns, const PolicyParams& params,
                                    const AdapterDelta& adapter, const SurrogateOptions& opts);

// Scalar loss only (finite-difference checks).
double surrogate_loss(std::span<const SampleView> samples, std::span<const Role> roles,
                      const PolicyParams& params, const AdapterDelta& adapter,
                      const SurrogateOptions& opts);

// Linear warmup from lr/warmup at step 0 to lr at step warmup-1, cosine
// decay to min_lr_ratio * lr at total_steps.
double lr_at(const TrainConfig& cfg, int step, int total_steps);

struct UpdateInfo {
  double grad_norm = 0.0;  // before clipping
  double applied_norm = 0.0;
  double lr = 0.0;
};

// Per-adapter norm clip then AdamW. Throws NumericError on non-finite input.
UpdateInfo apply_update(AdapterDelta& adapter, const Matrix& grad, const TrainConfig& cfg,
                        int step, int total_steps);

struct Validation {
  double accuracy = 0.0;
  double mean_reward = 0.0;
};

std::vector<TaskInstance> validation_set(TaskKind kind, int count, int difficulty, int modulus,
                                         std::uint64_t seed);

// One rollout per problem with a fixed evaluation seed.
Validation evaluate(const WorkflowSpec& spec, const AdapterStore& store, const Routing& routing,
                    std::span<const TaskInstance> problems, const LengthCaps& caps,
                    double temperature, std::uint64_t seed);

struct StepContext {
  int step = 0;
  const WorkflowSpec* spec = nullptr;
  const AdapterStore* store = nullptr;
  const Routing* routing = nullptr;
  std::span<const GroupBatch> batches;
};

struct TrainHooks {
  // Called once per step after rollouts and advantages, before any update.
  std::function<void(const StepContext&)> on_step_begin;
  std::function<void(int step, const Validation&)> on_validation;
};

struct ValidationPoint {
  int step = 0;
  double accuracy = 0.0;
  double mean_reward = 0.0;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<ValidationPoint> validation;
  double base_accuracy = 0.0;
  double peak_accuracy = 0.0;
  int step_at_peak = 0;
  double terminal_accuracy = 0.0;
  MetricSeries metrics;
  std::map<std::string, AdapterDelta> adapters;
};

std::shared_ptr<const PolicyParams> make_base_policy(const RunConfig& cfg);

// Runs the loop and writes the run directory when `out_dir` is non-empty:
// config.json, metrics.csv, validation.csv, trajectories/step_k.jsonl,
// checkpoints/{adapter}_{step}.ckpt, summary.json.
TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks = {});

// Component names in metrics.csv: adapter ids ("shared" or a role name).
std::vector<Role> roles_for_adapter(const WorkflowSpec& spec, const Routing& routing,
                                    const std::string& adapter_id);

}  // namespace rolelab
