#include "rolelab/workflow.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace rolelab {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::erase(out, '-');
  std::erase(out, '_');
  return out;
}

Token sample_from_log_probs(std::span<const double> log_probs, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  Token last_positive = 0;
  for (std::size_t k = 0; k < log_probs.size(); ++k) {
    const double p = std::exp(log_probs[k]);
    if (p > 0.0) last_positive = static_cast<Token>(k);
    cum += p;
    if (u < cum) return static_cast<Token>(k);
  }
  return last_positive;
}

const Turn* find_turn(const Trajectory& traj, Role role, int slot) {
  for (const auto& t : traj.turns) {
    if (t.role == role && t.slot == slot) return &t;
  }
  return nullptr;
}

const Turn* last_turn(const Trajectory& traj, Role role) {
  for (auto it = traj.turns.rbegin(); it != traj.turns.rend(); ++it) {
    if (it->role == role) return &*it;
  }
  return nullptr;
}

std::vector<Token> indexed_segment(int index, const std::vector<Token>& tokens) {
  std::vector<Token> seg = encode_integer(index);
  seg.insert(seg.end(), tokens.begin(), tokens.end());
  return seg;
}

}  // namespace

std::string_view workflow_kind_name(WorkflowKind kind) {
  switch (kind) {
    case WorkflowKind::kEvalOpt: return "eval_opt";
    case WorkflowKind::kVoting: return "voting";
    case WorkflowKind::kOrchWorkers: return "orch_workers";
    case WorkflowKind::kSingleAgent: return "single_agent";
  }
  return "single_agent";
}

WorkflowKind parse_workflow_kind(std::string_view name) {
  const std::string n = lower(name);
  if (n == "evalopt") return WorkflowKind::kEvalOpt;
  if (n == "voting") return WorkflowKind::kVoting;
  if (n == "orchworkers") return WorkflowKind::kOrchWorkers;
  if (n == "singleagent" || n == "sa") return WorkflowKind::kSingleAgent;
  throw ConfigError("unknown workflow '" + std::string(name) + "'");
}

std::vector<Role> WorkflowSpec::roles() const {
  std::vector<Role> out;
  for (const auto& s : slots) {
    if (std::find(out.begin(), out.end(), s.role) == out.end()) out.push_back(s.role);
  }
  return out;
}

bool WorkflowSpec::has_role(Role r) const {
  return std::any_of(slots.begin(), slots.end(), [r](const Slot& s) { return s.role == r; });
}

int WorkflowSpec::multiplicity(Role r) const {
  int n = 0;
  for (const auto& s : slots) {
    if (s.role == r) n += s.multiplicity;
  }
  return n;
}

WorkflowSpec build_workflow(WorkflowKind kind, const WorkflowConfig& config) {
  WorkflowSpec spec;
  spec.kind = kind;
  switch (kind) {
    case WorkflowKind::kEvalOpt:
      if (config.revision_cap < 0) throw ConfigError("EvalOpt revision cap must be >= 0");
      spec.revision_cap = config.revision_cap;
      spec.slots = {{Role::kGenerator, 1, "task; revisions add previous answer and verdict"},
                    {Role::kEvaluator, 1, "task + latest generator answer"}};
      break;
    case WorkflowKind::kVoting:
      if (config.voting_candidates != 3) throw ConfigError("Voting needs exactly 3 generators");
      spec.slots = {{Role::kGenerator, 3, "task only (independent)"},
                    {Role::kAggregator, 1, "task + indexed candidates"}};
      break;
    case WorkflowKind::kOrchWorkers:
      if (config.workers != 3) throw ConfigError("OrchWorkers needs exactly 3 workers");
      spec.slots = {{Role::kOrchestrator, 1, "task only"},
                    {Role::kWorker, 3, "plan + task"},
                    {Role::kSynthesizer, 1, "task + plan + indexed worker outputs"}};
      break;
    case WorkflowKind::kSingleAgent:
      spec.slots = {{Role::kGenerator, 1, "task only"}};
      break;
  }
  return spec;
}

std::string_view routing_mode_name(RoutingMode mode) {
  return mode == RoutingMode::kShared ? "shared" : "isolated";
}

RoutingMode parse_routing_mode(std::string_view name) {
  const std::string n = lower(name);
  if (n == "shared" || n == "sp" || n == "sharedpolicy") return RoutingMode::kShared;
  if (n == "isolated" || n == "ip" || n == "isolatedpolicy") return RoutingMode::kIsolated;
  throw ConfigError("unknown routing mode '" + std::string(name) + "'");
}

std::string route_policy(RoutingMode mode, Role role) {
  if (mode == RoutingMode::kShared) return std::string(kSharedAdapterId);
  return std::string(role_name(role));
}

std::string Routing::adapter_for(Role role) const {
  if (auto it = overrides.find(role); it != overrides.end()) return it->second;
  return route_policy(mode, role);
}

std::vector<std::string> adapter_ids(const WorkflowSpec& spec, RoutingMode mode) {
  std::vector<std::string> ids;
  for (Role r : spec.roles()) {
    auto id = route_policy(mode, r);
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(std::move(id));
  }
  return ids;
}

AdapterStore AdapterStore::for_workflow(std::shared_ptr<const PolicyParams> params,
                                        const WorkflowSpec& spec, RoutingMode mode) {
  AdapterStore store(std::move(params));
  for (const auto& id : adapter_ids(spec, mode)) {
    store.put(id, AdapterDelta::zeros_like(store.params()));
  }
  return store;
}

const AdapterDelta& AdapterStore::at(const std::string& id) const {
  auto it = adapters_.find(id);
  if (it == adapters_.end()) throw RoutingMiss("no adapter named '" + id + "'");
  return it->second;
}

AdapterDelta& AdapterStore::at(const std::string& id) {
  auto it = adapters_.find(id);
  if (it == adapters_.end()) throw RoutingMiss("no adapter named '" + id + "'");
  return it->second;
}

std::string_view finish_reason_name(FinishReason f) {
  return f == FinishReason::kStop ? "stop" : "length";
}

int LengthCaps::cap_for(Role role) const {
  if (auto it = per_role.find(role); it != per_role.end()) return it->second;
  return response;
}

Turn generate_turn(const AdapterStore& store, const Routing& routing, Role role, int slot,
                   Context context, int cap, bool fixed_length, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (cap < 0) throw ConfigError("length cap must be non-negative");
  const AdapterDelta& adapter = store.at(routing.adapter_for(role));
  const PolicyParams& params = store.params();

  Turn turn;
  turn.role = role;
  turn.slot = slot;
  turn.context = std::move(context);
  const ContextEncoder encoder(params.layout(), role, turn.context);
  Token last = tok::kBos;
  while (static_cast<int>(turn.tokens.size()) < cap) {
    const auto phi = encoder.features_at(turn.tokens.size(), last);
    const auto z = logits(params, adapter, phi);
    const auto lp_sample = log_distribution(z, temperature);
    const auto lp_train = log_distribution(z, 1.0);
    const Token t = sample_from_log_probs(lp_sample, rng);
    turn.tokens.push_back(t);
    turn.rollout_log_probs.push_back(lp_sample[static_cast<std::size_t>(t)]);
    turn.rollout_entropies.push_back(entropy_from_log_probs(lp_sample));
    turn.train_log_probs.push_back(lp_train[static_cast<std::size_t>(t)]);
    last = t;
    if (t == tok::kEos && !fixed_length) break;
  }
  // A turn that fills its cap is a length finish even if its last token is EOS.
  turn.finish = static_cast<int>(turn.tokens.size()) == cap ? FinishReason::kLength
                                                            : FinishReason::kStop;
  return turn;
}

Trajectory run_episode(const WorkflowSpec& spec, const AdapterStore& store, const Routing& routing,
                       const TaskInstance& task, const LengthCaps& caps, double temperature,
                       Rng& rng, const EpisodeOptions& options) {
  for (Role r : spec.roles()) (void)store.at(routing.adapter_for(r));

  Trajectory traj;
  traj.problem_id = task.id;
  auto gen = [&](Role role, int slot, Context ctx) -> const Turn& {
    traj.turns.push_back(generate_turn(store, routing, role, slot, std::move(ctx),
                                       caps.cap_for(role), caps.fixed_length, temperature, rng));
    return traj.turns.back();
  };
  const Context task_only{task.prompt, {}};

  switch (spec.kind) {
    case WorkflowKind::kSingleAgent:
      gen(Role::kGenerator, 0, task_only);
      break;

    case WorkflowKind::kVoting: {
      const int n = spec.multiplicity(Role::kGenerator);
      for (int k = 0; k < n; ++k) {
        if (options.identical_generators && k > 0) {
          Turn copy = traj.turns.front();
          copy.slot = k;
          traj.turns.push_back(std::move(copy));
        } else {
          gen(Role::kGenerator, k, task_only);
        }
      }
      Context agg{task.prompt, {}};
      for (int k = 0; k < n; ++k) agg.visible.push_back(indexed_segment(k + 1, traj.turns[k].tokens));
      gen(Role::kAggregator, 0, std::move(agg));
      break;
    }

    case WorkflowKind::kEvalOpt: {
      std::vector<Token> answer = gen(Role::kGenerator, 0, task_only).tokens;
      for (int round = 0;; ++round) {
        const Turn& eval = gen(Role::kEvaluator, 0, Context{task.prompt, {answer}});
        const Verdict v = parse_verdict(eval.text());
        if (v != Verdict::kIncorrect || round >= spec.revision_cap) break;
        Context revise{task.prompt, {answer, eval.tokens}};
        answer = gen(Role::kGenerator, 0, std::move(revise)).tokens;
      }
      break;
    }

    case WorkflowKind::kOrchWorkers: {
      const std::vector<Token> plan = gen(Role::kOrchestrator, 0, task_only).tokens;
      const int n = spec.multiplicity(Role::kWorker);
      std::vector<std::vector<Token>> outputs;
      for (int k = 0; k < n; ++k) {
        outputs.push_back(gen(Role::kWorker, k, Context{task.prompt, {plan}}).tokens);
      }
      Context synth{task.prompt, {plan}};
      for (int k = 0; k < n; ++k) synth.visible.push_back(indexed_segment(k + 1, outputs[k]));
      gen(Role::kSynthesizer, 0, std::move(synth));
      break;
    }
  }

  traj.final_answer = extract_final_answer(traj, spec, task.kind);
  const auto outcome = score_answer(task, traj.final_answer);
  traj.reward = outcome.value;
  traj.reward_class = outcome.cls;
  return traj;
}

std::optional<std::string> turn_answer(const Turn& turn, TaskKind kind) {
  const std::string text = turn.text();
  return kind == TaskKind::kMath ? parse_boxed(text) : last_fenced_block(text);
}

std::optional<std::string> extract_final_answer(const Trajectory& traj, const WorkflowSpec& spec,
                                                TaskKind kind) {
  const Turn* answer_turn = nullptr;
  switch (spec.kind) {
    case WorkflowKind::kSingleAgent:
    case WorkflowKind::kEvalOpt:
      answer_turn = last_turn(traj, Role::kGenerator);
      break;
    case WorkflowKind::kOrchWorkers:
      answer_turn = last_turn(traj, Role::kSynthesizer);
      break;
    case WorkflowKind::kVoting: {
      const Turn* agg = last_turn(traj, Role::kAggregator);
      if (!agg) return std::nullopt;
      const auto boxed = parse_boxed(agg->text());
      if (!boxed) return std::nullopt;
      const int n = spec.multiplicity(Role::kGenerator);
      const auto content = boxed_content_tokens(agg->tokens);
      const auto index = content ? tokens_to_integer(*content) : std::nullopt;
      if (index && *index >= 1 && *index <= n) {
        const Turn* cand = find_turn(traj, Role::kGenerator, static_cast<int>(*index - 1));
        return cand ? turn_answer(*cand, kind) : std::nullopt;
      }
      return boxed;  // literal answer
    }
  }
  return answer_turn ? turn_answer(*answer_turn, kind) : std::nullopt;
}

double replay_deviation(const Trajectory& traj, const AdapterStore& store, const Routing& routing,
                        double temperature) {
  double worst = 0.0;
  for (const auto& turn : traj.turns) {
    const AdapterDelta& adapter = store.at(routing.adapter_for(turn.role));
    const ContextEncoder encoder(store.params().layout(), turn.role, turn.context);
    Token last = tok::kBos;
    for (std::size_t i = 0; i < turn.tokens.size(); ++i) {
      const auto phi = encoder.features_at(i, last);
      const double lp = log_prob(store.params(), adapter, phi, turn.tokens[i], temperature);
      worst = std::max(worst, std::abs(lp - turn.rollout_log_probs[i]));
      last = turn.tokens[i];
    }
  }
  return worst;
}

}  // namespace rolelab
