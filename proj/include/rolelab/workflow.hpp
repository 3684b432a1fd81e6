#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rolelab/common.hpp"
#include "rolelab/policy.hpp"
#include "rolelab/tasks.hpp"

namespace rolelab {

enum class WorkflowKind { kEvalOpt, kVoting, kOrchWorkers, kSingleAgent };

std::string_view workflow_kind_name(WorkflowKind kind);
WorkflowKind parse_workflow_kind(std::string_view name);

struct Slot {
  Role role = Role::kGenerator;
  int multiplicity = 1;
  std::string wiring;  // what this slot's context contains
  bool operator==(const Slot&) const = default;
};

struct WorkflowConfig {
  int revision_cap = 3;
  int voting_candidates = 3;
  int workers = 3;
};

struct WorkflowSpec {
  WorkflowKind kind = WorkflowKind::kSingleAgent;
  std::vector<Slot> slots;
  int revision_cap = 0;

  std::vector<Role> roles() const;
  bool has_role(Role r) const;
  int multiplicity(Role r) const;
  bool operator==(const WorkflowSpec&) const = default;
};

// Throws ConfigError when the config breaks the per-kind shape (Voting 3+1,
// OrchWorkers 1+3+1, EvalOpt 1+1 with cap >= 0, SingleAgent 1).
WorkflowSpec build_workflow(WorkflowKind kind, const WorkflowConfig& config = {});

enum class RoutingMode { kShared, kIsolated };

std::string_view routing_mode_name(RoutingMode mode);
RoutingMode parse_routing_mode(std::string_view name);

inline constexpr std::string_view kSharedAdapterId = "shared";

// SharedPolicy: one id for every role. IsolatedPolicy: one id per role type.
std::string route_policy(RoutingMode mode, Role role);

// Routing plus optional per-role overrides (used to mount a single-agent
// adapter on generator slots while other roles fall back to the base).
struct Routing {
  RoutingMode mode = RoutingMode::kIsolated;
  std::map<Role, std::string> overrides;

  std::string adapter_for(Role role) const;
};

// Adapter ids a workflow needs under `mode`, in slot order without repeats.
std::vector<std::string> adapter_ids(const WorkflowSpec& spec, RoutingMode mode);

// Frozen base plus named adapters. Rollouts take it by const reference.
class AdapterStore {
 public:
  explicit AdapterStore(std::shared_ptr<const PolicyParams> params) : params_(std::move(params)) {}

  static AdapterStore for_workflow(std::shared_ptr<const PolicyParams> params,
                                   const WorkflowSpec& spec, RoutingMode mode);

  const PolicyParams& params() const { return *params_; }
  std::shared_ptr<const PolicyParams> params_ptr() const { return params_; }

  bool contains(const std::string& id) const { return adapters_.contains(id); }
  const AdapterDelta& at(const std::string& id) const;  // throws RoutingMiss
  AdapterDelta& at(const std::string& id);
  void put(const std::string& id, AdapterDelta adapter) { adapters_[id] = std::move(adapter); }
  const std::map<std::string, AdapterDelta>& adapters() const { return adapters_; }
  std::size_t size() const { return adapters_.size(); }

 private:
  std::shared_ptr<const PolicyParams> params_;
  std::map<std::string, AdapterDelta> adapters_;
};

enum class FinishReason { kStop, kLength };
std::string_view finish_reason_name(FinishReason f);

struct Turn {
  Role role = Role::kGenerator;
  int slot = 0;
  Context context;
  std::vector<Token> tokens;
  std::vector<double> rollout_log_probs;  // at sampling temperature
  std::vector<double> rollout_entropies;  // nats, at sampling temperature
  std::vector<double> train_log_probs;    // temperature 1, sampling-time params
  FinishReason finish = FinishReason::kStop;

  std::string text() const { return detokenize(tokens); }
  bool operator==(const Turn&) const = default;
};

struct Trajectory {
  std::string problem_id;
  std::vector<Turn> turns;
  std::optional<std::string> final_answer;
  double reward = 0.0;
  RewardClass reward_class = RewardClass::kMalformed;
  bool operator==(const Trajectory&) const = default;
};

struct LengthCaps {
  int response = 64;
  std::map<Role, int> per_role;
  // Turns always run to their cap; EOS does not terminate.
  bool fixed_length = false;

  int cap_for(Role role) const;
};

struct EpisodeOptions {
  // Degenerate amplification mode: sample generator slot 0 once and copy it
  // into the other generator slots of a Voting episode.
  bool identical_generators = false;
};

// Samples one turn with the adapter routed for `role`.
Turn generate_turn(const AdapterStore& store, const Routing& routing, Role role, int slot,
                   Context context, int cap, bool fixed_length, double temperature, Rng& rng);

// One workflow rollout. Deterministic given (spec, adapters, task, rng state).
Trajectory run_episode(const WorkflowSpec& spec, const AdapterStore& store, const Routing& routing,
                       const TaskInstance& task, const LengthCaps& caps, double temperature,
                       Rng& rng, const EpisodeOptions& options = {});

std::optional<std::string> extract_final_answer(const Trajectory& traj, const WorkflowSpec& spec,
                                                TaskKind kind = TaskKind::kMath);

// Answer of a single turn: boxed content (math) or last fenced body (code).
std::optional<std::string> turn_answer(const Turn& turn, TaskKind kind);

// Re-scores every stored token with the current adapters; returns the max
// absolute deviation from the stored rollout log-probs.
double replay_deviation(const Trajectory& traj, const AdapterStore& store, const Routing& routing,
                        double temperature);

}  // namespace rolelab
