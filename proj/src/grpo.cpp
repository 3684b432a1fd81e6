#include "rolelab/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>

#include "rolelab/config.hpp"
#include "rolelab/trajectory_io.hpp"

namespace rolelab {

namespace {

bool contains_role(std::span<const Role> roles, Role r) {
  return std::find(roles.begin(), roles.end(), r) != roles.end();
}

std::size_t trajectory_tokens(const Trajectory& t) {
  std::size_t n = 0;
  for (const auto& turn : t.turns) n += turn.tokens.size();
  return n;
}

// One turn's contribution: every token gets `weight`, the turn's advantage
// comes from its trajectory.
struct TurnUnit {
  const Turn* turn = nullptr;
  double weight = 0.0;
  double advantage = 0.0;
};

double turn_norm(const Trajectory& traj, const Turn& turn, LossAggregation agg) {
  return agg == LossAggregation::kTrajectoryTokenMean ? static_cast<double>(trajectory_tokens(traj))
                                                      : static_cast<double>(turn.tokens.size());
}

std::vector<TurnUnit> masked_units(std::span<const SampleView> samples, std::span<const Role> roles,
                                   const SurrogateOptions& opts) {
  std::vector<TurnUnit> units;
  const double batch = static_cast<double>(samples.size());
  for (const auto& s : samples) {
    for (const auto& turn : s.trajectory->turns) {
      if (!contains_role(roles, turn.role)) continue;
      if (opts.slot >= 0 && turn.slot != opts.slot) continue;
      if (turn.tokens.empty()) continue;
      units.push_back({&turn, 1.0 / (batch * turn_norm(*s.trajectory, turn, opts.loss_agg)),
                       s.advantage});
    }
  }
  return units;
}

// Walks every token of every unit and hands (logits, phi, weight, advantage,
// turn, index) to `fn`.
template <typename Fn>
void for_each_unit_token(std::span<const TurnUnit> units, const PolicyParams& params,
                         const AdapterDelta& adapter, Fn&& fn) {
  for (const auto& u : units) {
    const Turn& turn = *u.turn;
    if (turn.tokens.empty()) continue;
    if (turn.train_log_probs.size() != turn.tokens.size()) {
      throw Error("turn is missing temperature-1 rollout log-probs");
    }
    const ContextEncoder encoder(params.layout(), turn.role, turn.context);
    Token last = tok::kBos;
    for (std::size_t i = 0; i < turn.tokens.size(); ++i) {
      const auto phi = encoder.features_at(i, last);
      const auto z = logits(params, adapter, phi);
      fn(z, phi, u.weight, u.advantage, turn, i);
      last = turn.tokens[i];
    }
  }
}

struct TokenTerms {
  double rho = 1.0;
  double objective = 0.0;
  bool active = true;
  bool clipped = false;
};

TokenTerms surrogate_terms(double lp_cur, double lp_old, double adv, const SurrogateOptions& o) {
  TokenTerms t;
  t.rho = std::exp(lp_cur - lp_old);
  const double clipped_rho = std::clamp(t.rho, 1.0 - o.clip_low, 1.0 + o.clip_high);
  t.objective = std::min(t.rho * adv, clipped_rho * adv);
  t.clipped = (adv > 0.0 && t.rho > 1.0 + o.clip_high) || (adv < 0.0 && t.rho < 1.0 - o.clip_low);
  t.active = !t.clipped && adv != 0.0;
  return t;
}

}  // namespace

std::string_view loss_aggregation_name(LossAggregation a) {
  return a == LossAggregation::kTrajectoryTokenMean ? "trajectory_token_mean" : "turn_token_mean";
}

LossAggregation parse_loss_aggregation(std::string_view name) {
  if (name == "trajectory_token_mean") return LossAggregation::kTrajectoryTokenMean;
  if (name == "turn_token_mean") return LossAggregation::kTurnTokenMean;
  throw ConfigError("unknown loss aggregation '" + std::string(name) + "'");
}

std::string_view minibatch_unit_name(MinibatchUnit u) {
  return u == MinibatchUnit::kTrajectory ? "trajectory" : "role_turn";
}

MinibatchUnit parse_minibatch_unit(std::string_view name) {
  if (name == "trajectory") return MinibatchUnit::kTrajectory;
  if (name == "role_turn") return MinibatchUnit::kRoleTurn;
  throw ConfigError("unknown minibatch unit '" + std::string(name) + "'");
}

GroupBatch collect_group(const WorkflowSpec& spec, const AdapterStore& store,
                         const Routing& routing, const TaskInstance& problem, int n,
                         const LengthCaps& caps, double temperature, Rng& rng,
                         const EpisodeOptions& options) {
  if (n < 2) throw ConfigError("group size must be at least 2");
  GroupBatch batch;
  batch.problem = problem;
  for (int i = 0; i < n; ++i) {
    batch.trajectories.push_back(
        run_episode(spec, store, routing, problem, caps, temperature, rng, options));
    batch.rewards.push_back(batch.trajectories.back().reward);
  }
  return batch;
}

std::vector<double> group_advantages(std::span<const double> rewards, double std_epsilon) {
  if (rewards.size() < 2) throw ConfigError("group needs at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd < std_epsilon) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

void assign_advantages(GroupBatch& batch, double std_epsilon) {
  batch.advantages = group_advantages(batch.rewards, std_epsilon);
}

std::vector<SampleView> flatten(std::span<const GroupBatch> batches) {
  std::vector<SampleView> out;
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.trajectories.size(); ++i) {
      out.push_back({&b.trajectories[i], b.advantages.at(i)});
    }
  }
  return out;
}

namespace {

MaskedGradient unit_gradient(std::span<const TurnUnit> units, const PolicyParams& params,
                             const AdapterDelta& adapter, const SurrogateOptions& opts) {
  MaskedGradient out;
  out.grad = Matrix(params.vocab(), params.dim());
  std::vector<double> probs(static_cast<std::size_t>(params.vocab()));
  for_each_unit_token(
      units, params, adapter,
      [&](const std::vector<double>& z, const ContextFeatures& phi, double weight, double adv,
          const Turn& turn, std::size_t i) {
        const Token t = turn.tokens[i];
        const auto lp1 = log_distribution(z, 1.0);
        const auto lpT = log_distribution(z, opts.temperature);
        const auto terms = surrogate_terms(lp1[t], turn.train_log_probs[i], adv, opts);
        out.loss -= weight * terms.objective;
        if (terms.active) {
          for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(lp1[k]);
          // d(-rho * adv)/d delta = -adv * rho * score
          accumulate_score(probs, phi, t, -weight * adv * terms.rho, out.grad);
        }
        const double rho_t = std::exp(lpT[t] - turn.rollout_log_probs[i]);
        out.chi2_sum += (rho_t - 1.0) * (rho_t - 1.0);
        out.max_ratio = std::max(out.max_ratio, rho_t);
        out.log_prob_sum += lp1[t];
        out.entropy_sum += turn.rollout_entropies[i];
        out.clipped += terms.clipped ? 1 : 0;
        ++out.tokens;
      });
  out.empty = out.tokens == 0;
  return out;
}

}  // namespace

MaskedGradient role_masked_gradient(std::span<const SampleView> samples,
                                    std::span<const Role> roles, const PolicyParams& params,
                                    const AdapterDelta& adapter, const SurrogateOptions& opts) {
  return unit_gradient(masked_units(samples, roles, opts), params, adapter, opts);
}

MaskedGradient turn_masked_gradient(std::span<const TurnSample> turns, const PolicyParams& params,
                                    const AdapterDelta& adapter, const SurrogateOptions& opts) {
  std::vector<TurnUnit> units;
  const double batch = static_cast<double>(turns.size());
  for (const auto& ts : turns) {
    const Turn& turn = ts.trajectory->turns.at(ts.turn);
    if (turn.tokens.empty()) continue;
    units.push_back({&turn, 1.0 / (batch * turn_norm(*ts.trajectory, turn, opts.loss_agg)),
                     ts.advantage});
  }
  return unit_gradient(units, params, adapter, opts);
}

std::vector<TurnSample> role_turns(std::span<const SampleView> samples,
                                   std::span<const Role> roles) {
  std::vector<TurnSample> out;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.trajectory->turns.size(); ++i) {
      if (contains_role(roles, s.trajectory->turns[i].role)) {
        out.push_back({s.trajectory, i, s.advantage});
      }
    }
  }
  return out;
}

double surrogate_loss(std::span<const SampleView> samples, std::span<const Role> roles,
                      const PolicyParams& params, const AdapterDelta& adapter,
                      const SurrogateOptions& opts) {
  double loss = 0.0;
  for_each_unit_token(masked_units(samples, roles, opts), params, adapter,
                      [&](const std::vector<double>& z, const ContextFeatures&, double weight,
                          double adv, const Turn& turn, std::size_t i) {
                        const auto lp1 = log_distribution(z, 1.0);
                        const Token t = turn.tokens[i];
                        loss -= weight *
                                surrogate_terms(lp1[t], turn.train_log_probs[i], adv, opts).objective;
                      });
  return loss;
}

double lr_at(const TrainConfig& cfg, int step, int total_steps) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.schedule == "constant") return cfg.lr;
  const double lo = cfg.min_lr_ratio * cfg.lr;
  const int span = std::max(1, total_steps - cfg.warmup_steps);
  const double progress =
      std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  return lo + (cfg.lr - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

UpdateInfo apply_update(AdapterDelta& adapter, const Matrix& grad, const TrainConfig& cfg,
                        int step, int total_steps) {
  if (!grad.same_shape(adapter.delta)) throw Error("gradient shape does not match adapter");
  if (!grad.all_finite()) throw NumericError("non-finite gradient at step " + std::to_string(step));
  UpdateInfo info;
  info.grad_norm = grad.norm();
  info.lr = lr_at(cfg, step, total_steps);
  const double scale = info.grad_norm > cfg.grad_clip ? cfg.grad_clip / info.grad_norm : 1.0;
  info.applied_norm = info.grad_norm * scale;
  ++adapter.step_count;
  // An exactly-zero gradient (role absent from the minibatch) leaves the
  // parameters and moments untouched.
  if (info.grad_norm == 0.0) return info;

  const double t = static_cast<double>(adapter.step_count);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  auto g = grad.data();
  auto d = adapter.delta.data();
  auto m = adapter.first_moment.data();
  auto v = adapter.second_moment.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i] * scale;
    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * gi;
    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    d[i] -= info.lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * d[i]);
  }
  return info;
}

std::vector<TaskInstance> validation_set(TaskKind kind, int count, int difficulty, int modulus,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TaskInstance> out;
  for (int i = 0; i < count; ++i) out.push_back(sample_task(kind, difficulty, rng, modulus));
  return out;
}

Validation evaluate(const WorkflowSpec& spec, const AdapterStore& store, const Routing& routing,
                    std::span<const TaskInstance> problems, const LengthCaps& caps,
                    double temperature, std::uint64_t seed) {
  Validation v;
  if (problems.empty()) return v;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const auto traj = run_episode(spec, store, routing, problems[i], caps, temperature, rng);
    v.accuracy += traj.reward_class == RewardClass::kCorrect ? 1.0 : 0.0;
    v.mean_reward += traj.reward;
  }
  v.accuracy /= static_cast<double>(problems.size());
  v.mean_reward /= static_cast<double>(problems.size());
  return v;
}

std::vector<Role> roles_for_adapter(const WorkflowSpec& spec, const Routing& routing,
                                    const std::string& adapter_id) {
  std::vector<Role> out;
  for (Role r : spec.roles()) {
    if (routing.adapter_for(r) == adapter_id) out.push_back(r);
  }
  return out;
}

std::shared_ptr<const PolicyParams> make_base_policy(const RunConfig& cfg) {
  const auto layout = FeatureLayout::for_dim(kVocabSize, cfg.capacity);
  return std::make_shared<const PolicyParams>(PolicyParams::create(
      layout, derive_seed(cfg.seed, 0xBA5E), cfg.prior_strength, cfg.init_scale));
}

namespace {

void check_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (t.group_n < 2) throw ConfigError("group_n must be >= 2");
  if (t.minibatch < 1) throw ConfigError("minibatch must be >= 1");
  if (t.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (t.problems_per_step < 1) throw ConfigError("problems_per_step must be >= 1");
  if (!(t.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(t.lr > 0.0)) throw ConfigError("lr must be positive");
  if (t.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (t.schedule != "cosine" && t.schedule != "constant") {
    throw ConfigError("schedule must be cosine or constant");
  }
  if (!(t.grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (t.clip_low < 0.0 || t.clip_low >= 1.0 || t.clip_high < 0.0) {
    throw ConfigError("clip ratios out of range");
  }
  if (t.validation_interval < 1) throw ConfigError("validation_interval must be >= 1");
  if (cfg.validation_problems < 0) throw ConfigError("validation_problems must be >= 0");
  if (cfg.difficulty < 1 || cfg.difficulty > 8) throw ConfigError("difficulty must be in 1..8");
  if (cfg.modulus < 2) throw ConfigError("modulus must be >= 2");
  if (cfg.caps.response < 0) throw ConfigError("response_cap must be >= 0");
}

struct ComponentAccum {
  std::size_t tokens = 0;
  double chi2_sum = 0.0;
  double max_ratio = 0.0;
  double log_prob_sum = 0.0;
  double entropy_sum = 0.0;
  std::size_t clipped = 0;
  double grad_norm_sum = 0.0;
  double grad_norm_max = 0.0;
  int updates = 0;
};

class RunWriter {
 public:
  explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_);
    metrics_.open(dir_ / "metrics.csv");
    metrics_ << "step,component,metric,value\n";
    metrics_.precision(17);
    validation_.open(dir_ / "validation.csv");
    validation_ << "step,accuracy,mean_reward\n";
    validation_.precision(17);
  }

  bool enabled() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }

  void metric(int step, const std::string& comp, const std::string& name, double value) {
    if (enabled()) metrics_ << step << ',' << comp << ',' << name << ',' << value << '\n';
  }
  void validation(const ValidationPoint& p) {
    if (enabled()) validation_ << p.step << ',' << p.accuracy << ',' << p.mean_reward << '\n';
  }
  void flush() {
    if (!enabled()) return;
    metrics_.flush();
    validation_.flush();
  }

 private:
  std::filesystem::path dir_;
  std::ofstream metrics_;
  std::ofstream validation_;
};

}  // namespace

TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks) {
  check_config(cfg);
  const TrainConfig& tc = cfg.train;
  const WorkflowSpec spec = build_workflow(cfg.workflow, cfg.workflow_config);
  const Routing routing{tc.routing, {}};
  AdapterStore store = AdapterStore::for_workflow(make_base_policy(cfg), spec, routing.mode);
  const auto adapter_list = adapter_ids(spec, routing.mode);
  std::vector<std::vector<Role>> adapter_roles;
  for (const auto& id : adapter_list) adapter_roles.push_back(roles_for_adapter(spec, routing, id));

  RunWriter writer(out_dir);
  if (writer.enabled()) write_json_file(out_dir / "config.json", to_json(cfg));

  TrainResult result;
  result.run_dir = out_dir;
  const auto vset = validation_set(cfg.task, cfg.validation_problems, cfg.difficulty,
                                   cfg.modulus, derive_seed(cfg.seed, 0x7A11D));
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 0xE7A1);

  auto validate = [&](int step) {
    const auto v = evaluate(spec, store, routing, vset, cfg.caps, tc.temperature, eval_seed);
    const ValidationPoint p{step, v.accuracy, v.mean_reward};
    result.validation.push_back(p);
    writer.validation(p);
    if (step >= cfg.metrics_start_step) {
      result.metrics.add(step, "validation", "accuracy", v.accuracy);
      writer.metric(step, "validation", "accuracy", v.accuracy);
    }
    if (hooks.on_validation) hooks.on_validation(step, v);
  };

  auto checkpoint = [&](int step) {
    if (!writer.enabled()) return;
    for (const auto& id : adapter_list) {
      save_adapter(out_dir / "checkpoints" / (id + "_" + std::to_string(step) + ".ckpt"),
                   store.at(id), store.params().seed(), id);
    }
  };

  const EpisodeOptions episode_opts{cfg.identical_generators};
  SurrogateOptions sopts{tc.clip_low, tc.clip_high, tc.temperature, tc.loss_agg, -1};
  Rng task_rng(derive_seed(cfg.seed, 0x7A5C));

  try {
    validate(0);
    for (int step = 0; step < cfg.steps; ++step) {
      std::vector<GroupBatch> batches;
      int zero_var = 0;
      for (int p = 0; p < tc.problems_per_step; ++p) {
        const TaskInstance task = sample_task(cfg.task, cfg.difficulty, task_rng, cfg.modulus);
        Rng rng(derive_seed(cfg.seed, 0x6E0, static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(p)));
        auto group = collect_group(spec, store, routing, task, tc.group_n, cfg.caps,
                                   tc.temperature, rng, episode_opts);
        assign_advantages(group, tc.std_epsilon);
        const bool degenerate =
            std::all_of(group.advantages.begin(), group.advantages.end(),
                        [](double a) { return a == 0.0; });
        zero_var += degenerate ? 1 : 0;
        if (!(degenerate && tc.drop_zero_variance)) batches.push_back(std::move(group));
      }

      if (hooks.on_step_begin) hooks.on_step_begin({step, &spec, &store, &routing, batches});

      if (writer.enabled() && cfg.trajectory_log_interval > 0 &&
          step % cfg.trajectory_log_interval == 0) {
        std::vector<nlohmann::json> lines;
        const TrajectoryMeta meta{step, std::string(workflow_kind_name(spec.kind)),
                                  std::string(routing_mode_name(routing.mode))};
        for (const auto& b : batches) {
          for (const auto& t : b.trajectories) {
            if (static_cast<int>(lines.size()) >= cfg.trajectory_log_max) break;
            lines.push_back(trajectory_to_json(t, b.problem, meta));
          }
        }
        write_jsonl(out_dir / "trajectories" / ("step_" + std::to_string(step) + ".jsonl"), lines);
      }

      const auto samples = flatten(batches);
      std::map<std::string, ComponentAccum> acc;
      const auto mb_size = static_cast<std::size_t>(tc.minibatch);
      // Per-adapter turn samples; only used when minibatches count role turns.
      std::vector<std::vector<TurnSample>> turn_samples(adapter_list.size());
      std::size_t rounds = (samples.size() + mb_size - 1) / mb_size;
      if (tc.minibatch_unit == MinibatchUnit::kRoleTurn) {
        rounds = 0;
        for (std::size_t a = 0; a < adapter_list.size(); ++a) {
          turn_samples[a] = role_turns(samples, adapter_roles[a]);
          rounds = std::max(rounds, (turn_samples[a].size() + mb_size - 1) / mb_size);
        }
      }
      for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t r = 0; r < rounds; ++r) {
          // Every gradient of a round is taken before any adapter moves.
          std::vector<std::optional<MaskedGradient>> grads(adapter_list.size());
          for (std::size_t a = 0; a < adapter_list.size(); ++a) {
            const AdapterDelta& adapter = store.at(adapter_list[a]);
            if (tc.minibatch_unit == MinibatchUnit::kTrajectory) {
              const std::size_t start = r * mb_size;
              const std::size_t end = std::min(samples.size(), start + mb_size);
              const std::span<const SampleView> mb(samples.data() + start, end - start);
              grads[a] = role_masked_gradient(mb, adapter_roles[a], store.params(), adapter, sopts);
            } else {
              const auto& ts = turn_samples[a];
              const std::size_t start = r * mb_size;
              if (start >= ts.size()) continue;
              const std::size_t end = std::min(ts.size(), start + mb_size);
              grads[a] = turn_masked_gradient(std::span(ts.data() + start, end - start),
                                              store.params(), adapter, sopts);
            }
          }
          for (std::size_t a = 0; a < adapter_list.size(); ++a) {
            if (!grads[a]) continue;
            const auto& g = *grads[a];
            auto& c = acc[adapter_list[a]];
            const auto info = apply_update(store.at(adapter_list[a]), g.grad, tc, step, cfg.steps);
            c.tokens += g.tokens;
            c.chi2_sum += g.chi2_sum;
            c.max_ratio = std::max(c.max_ratio, g.max_ratio);
            c.log_prob_sum += g.log_prob_sum;
            c.entropy_sum += g.entropy_sum;
            c.clipped += g.clipped;
            c.grad_norm_sum += info.grad_norm;
            c.grad_norm_max = std::max(c.grad_norm_max, info.grad_norm);
            ++c.updates;
          }
        }
      }

      if (step >= cfg.metrics_start_step) {
        auto log = [&](const std::string& comp, const std::string& name, double v) {
          result.metrics.add(step, comp, name, v);
          writer.metric(step, comp, name, v);
        };
        for (const auto& [id, c] : acc) {
          log(id, "grad_norm", c.updates ? c.grad_norm_sum / c.updates : 0.0);
          log(id, "grad_norm_max", c.grad_norm_max);
          if (c.tokens == 0) continue;  // empty role this step
          const double n = static_cast<double>(c.tokens);
          log(id, "chi2", c.chi2_sum / n);
          log(id, "max_token_ratio", c.max_ratio);
          log(id, "mean_log_prob", c.log_prob_sum / n);
          log(id, "perplexity", std::exp(-c.log_prob_sum / n));
          log(id, "entropy", c.entropy_sum / n);
          log(id, "clip_fraction", static_cast<double>(c.clipped) / n);
          log(id, "tokens", n);
        }
        double reward = 0.0, correct = 0.0, count = 0.0;
        for (const auto& b : batches) {
          for (const auto& t : b.trajectories) {
            reward += t.reward;
            correct += t.reward_class == RewardClass::kCorrect ? 1.0 : 0.0;
            count += 1.0;
          }
        }
        log("train", "reward_mean", count > 0 ? reward / count : 0.0);
        log("train", "accuracy", count > 0 ? correct / count : 0.0);
        log("train", "lr", lr_at(tc, step, cfg.steps));
        log("train", "zero_variance_groups", zero_var);
      }

      const int done = step + 1;
      if (done % tc.validation_interval == 0 || done == cfg.steps) validate(done);
      if (tc.checkpoint_interval > 0 && done % tc.checkpoint_interval == 0) checkpoint(done);
      writer.flush();
    }
    if (tc.checkpoint_interval <= 0 || cfg.steps % tc.checkpoint_interval != 0 || cfg.steps == 0) {
      checkpoint(cfg.steps);
    }
  } catch (const Error& e) {
    if (writer.enabled()) {
      writer.flush();
      write_json_file(out_dir / "abort.json",
                      {{"error", e.what()}, {"validation_points", result.validation.size()}});
    }
    throw;
  }

  result.base_accuracy = result.validation.front().accuracy;
  result.terminal_accuracy = result.validation.back().accuracy;
  result.peak_accuracy = result.base_accuracy;
  result.step_at_peak = 0;
  for (const auto& p : result.validation) {
    if (p.accuracy > result.peak_accuracy) {
      result.peak_accuracy = p.accuracy;
      result.step_at_peak = p.step;
    }
  }
  for (const auto& id : adapter_list) result.adapters[id] = store.at(id);

  if (writer.enabled()) {
    nlohmann::json amp = nlohmann::json::object();
    for (const auto& [c, s] : amplitude_summary(result.metrics)) amp[c] = to_json(s);
    nlohmann::json dyn = nlohmann::json::array();
    for (const auto& r : role_dynamics(result.metrics)) dyn.push_back(to_json(r));
    write_json_file(out_dir / "summary.json",
                    {{"workflow", workflow_kind_name(spec.kind)},
                     {"routing", routing_mode_name(routing.mode)},
                     {"task", task_kind_name(cfg.task)},
                     {"capacity", cfg.capacity},
                     {"steps", cfg.steps},
                     {"seed", cfg.seed},
                     {"adapters", adapter_list},
                     {"base_accuracy", result.base_accuracy},
                     {"peak_accuracy", result.peak_accuracy},
                     {"step_at_peak", result.step_at_peak},
                     {"terminal_accuracy", result.terminal_accuracy},
                     {"amplitude", amp},
                     {"role_dynamics", dyn}});
  }
  return result;
}

}  // namespace rolelab
