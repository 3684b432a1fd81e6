#include "rolelab/mechanisms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "rolelab/config.hpp"
#include "rolelab/harness.hpp"

namespace rolelab {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(std::span<const double> v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double ratio_for(const std::vector<DynamicsRow>& rows, const std::string& component) {
  for (const auto& r : rows) {
    if (r.component == component) return r.chi2_ratio;
  }
  return kNaN;
}

double mean_metric(const MetricSeries& m, const std::string& comp, const std::string& metric) {
  if (!m.contains(comp, metric)) return kNaN;
  std::vector<double> v;
  for (const auto& [_, x] : m.series(comp, metric)) v.push_back(x);
  return mean_of(v);
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json ci_json(const ConfidenceInterval& ci) {
  return {{"mean", num(ci.mean)}, {"low", num(ci.low)}, {"high", num(ci.high)}};
}

}  // namespace

ConfidenceInterval bootstrap_mean_ci(std::span<const double> values, double confidence,
                                     int resamples, std::uint64_t seed) {
  ConfidenceInterval ci{mean_of(values), kNaN, kNaN};
  if (values.empty() || resamples < 1) return ci;
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[rng.below(values.size())];
    m = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - confidence) / 2.0;
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::clamp(
        std::floor(q * static_cast<double>(means.size() - 1)), 0.0,
        static_cast<double>(means.size() - 1)));
    return means[idx];
  };
  ci.low = at(alpha);
  ci.high = at(1.0 - alpha);
  return ci;
}

double amplification_ratio(std::span<const Matrix> slot_grads) {
  if (slot_grads.empty()) return kNaN;
  Matrix sum(slot_grads.front().rows(), slot_grads.front().cols());
  double sq = 0.0;
  for (const auto& g : slot_grads) {
    sum += g;
    sq += g.squared_norm();
  }
  const double rms = std::sqrt(sq / static_cast<double>(slot_grads.size()));
  if (rms == 0.0) return kNaN;
  return sum.norm() / rms;
}

std::vector<Matrix> slot_gradients(std::span<const SampleView> samples, Role role, int slots,
                                   const PolicyParams& params, const AdapterDelta& adapter,
                                   const SurrogateOptions& opts) {
  std::vector<Matrix> out;
  const Role roles[] = {role};
  for (int k = 0; k < slots; ++k) {
    SurrogateOptions o = opts;
    o.slot = k;
    out.push_back(role_masked_gradient(samples, roles, params, adapter, o).grad);
  }
  return out;
}

std::vector<Matrix> shuffled_slot_gradients(std::span<const SampleView> samples, Role role,
                                            int slots, const PolicyParams& params,
                                            const AdapterDelta& adapter,
                                            const SurrogateOptions& opts, Rng& rng) {
  std::vector<double> adv;
  for (const auto& s : samples) adv.push_back(s.advantage);
  std::vector<Matrix> out;
  const Role roles[] = {role};
  for (int k = 0; k < slots; ++k) {
    rng.shuffle(adv.begin(), adv.end());
    std::vector<SampleView> permuted(samples.begin(), samples.end());
    for (std::size_t i = 0; i < permuted.size(); ++i) permuted[i].advantage = adv[i];
    SurrogateOptions o = opts;
    o.slot = k;
    out.push_back(role_masked_gradient(permuted, roles, params, adapter, o).grad);
  }
  return out;
}

MechanismAConfig default_mechanism_a() {
  MechanismAConfig c;
  apply_preset(c.run, "desk");
  c.run.workflow = WorkflowKind::kVoting;
  c.run.task = TaskKind::kMath;
  c.run.train.routing = RoutingMode::kIsolated;
  // Full-size batches keep the co-variation signal above per-step noise, and
  // per-role turn minibatches give the three generator slots their extra
  // optimizer steps.
  c.run.train.problems_per_step = 64;
  c.run.train.minibatch_unit = MinibatchUnit::kRoleTurn;
  c.run.validation_problems = 128;
  c.run.train.checkpoint_interval = 0;
  return c;
}

MechanismAReport mechanism_a_experiment(const MechanismAConfig& cfg,
                                        const std::filesystem::path& out_dir) {
  if (cfg.run.workflow != WorkflowKind::kVoting) throw ConfigError("mechanism A needs Voting");
  if (cfg.run.train.routing != RoutingMode::kIsolated) {
    throw ConfigError("mechanism A needs isolated routing");
  }
  MechanismAReport report;
  auto sub = [&](const char* name) {
    return out_dir.empty() ? std::filesystem::path{} : out_dir / name;
  };
  const int slots = cfg.run.workflow_config.voting_candidates;
  auto sopts = [&](const RunConfig& rc) {
    return SurrogateOptions{rc.train.clip_low, rc.train.clip_high, rc.train.temperature,
                            rc.train.loss_agg, -1};
  };

  // Standard run with the independent-contribution null on the same batches.
  {
    TrainHooks hooks;
    hooks.on_step_begin = [&](const StepContext& ctx) {
      const auto samples = flatten(ctx.batches);
      const AdapterDelta& gen = ctx.store->at(ctx.routing->adapter_for(Role::kGenerator));
      const auto opts = sopts(cfg.run);
      const auto grads =
          slot_gradients(samples, Role::kGenerator, slots, ctx.store->params(), gen, opts);
      Rng rng(derive_seed(cfg.run.seed, 0x5AFF1E, static_cast<std::uint64_t>(ctx.step)));
      const auto null_grads = shuffled_slot_gradients(samples, Role::kGenerator, slots,
                                                      ctx.store->params(), gen, opts, rng);
      const double standard = amplification_ratio(grads);
      const double null_ratio = amplification_ratio(null_grads);
      if (!std::isfinite(standard) || !std::isfinite(null_ratio)) return;
      Matrix total(gen.delta.rows(), gen.delta.cols());
      for (const auto& g : grads) total += g;
      report.steps.push_back({ctx.step, standard, null_ratio, total.norm()});
    };
    const auto voting = train(cfg.run, sub("voting_ip"), hooks);
    report.voting_dynamics = role_dynamics(voting.metrics);
    report.voting_peak_accuracy = voting.peak_accuracy;
    report.generator_chi2_ratio = ratio_for(report.voting_dynamics, "generator");
    report.aggregator_chi2_ratio = ratio_for(report.voting_dynamics, "aggregator");

    const auto sa = run_sa_baseline(cfg.run, sub("single_agent"));
    report.single_agent_dynamics = role_dynamics(sa.metrics);
    report.single_agent_peak_accuracy = sa.peak_accuracy;
    report.grad_norm_vs_single_agent = mean_metric(voting.metrics, "generator", "grad_norm") /
                                       mean_metric(sa.metrics, "generator", "grad_norm");
  }

  // Degenerate run: generator slots 2 and 3 copy slot 1.
  if (cfg.degenerate_steps > 0) {
    RunConfig rc = cfg.run;
    rc.identical_generators = true;
    rc.steps = cfg.degenerate_steps;
    TrainHooks hooks;
    hooks.on_step_begin = [&](const StepContext& ctx) {
      const auto samples = flatten(ctx.batches);
      const AdapterDelta& gen = ctx.store->at(ctx.routing->adapter_for(Role::kGenerator));
      const auto grads =
          slot_gradients(samples, Role::kGenerator, slots, ctx.store->params(), gen, sopts(rc));
      const double r = amplification_ratio(grads);
      if (std::isfinite(r)) report.degenerate.push_back(r);
    };
    train(rc, sub("degenerate"), hooks);
  }

  std::vector<double> standard, null_ratio, diff;
  for (const auto& s : report.steps) {
    standard.push_back(s.standard);
    null_ratio.push_back(s.null_ratio);
    diff.push_back(s.standard - s.null_ratio);
  }
  report.standard_mean = mean_of(standard);
  report.null_mean = mean_of(null_ratio);
  report.difference = bootstrap_mean_ci(diff, cfg.confidence, cfg.bootstrap_resamples,
                                        derive_seed(cfg.run.seed, 0xB007));

  if (!out_dir.empty()) {
    write_json_file(out_dir / "mechanism_a.json", to_json(report));
    std::ofstream csv(out_dir / "amplification.csv");
    csv.precision(17);
    csv << "step,standard_ratio,null_ratio,generator_grad_norm\n";
    for (const auto& s : report.steps) {
      csv << s.step << ',' << s.standard << ',' << s.null_ratio << ',' << s.generator_grad_norm << '\n';
    }
    std::ofstream t3(out_dir / "role_dynamics.csv");
    t3.precision(17);
    t3 << "run,component,chi2_ratio,chi2_peak_step,ppl_ratio,grad_norm_ratio\n";
    for (const auto* rows : {&report.voting_dynamics, &report.single_agent_dynamics}) {
      const char* run = rows == &report.voting_dynamics ? "voting_ip" : "single_agent";
      for (const auto& r : *rows) {
        t3 << run << ',' << r.component << ',' << r.chi2_ratio << ',' << r.chi2_peak_step << ','
           << r.ppl_ratio << ',' << r.grad_norm_ratio << '\n';
      }
    }
  }
  return report;
}

MechanismBConfig default_mechanism_b() {
  MechanismBConfig c;
  c.train.lr = 2e-2;
  c.train.routing = RoutingMode::kShared;
  c.probes = {
      {"token_mass", 1, 36, 1, 4},
      {"zero_minority", 1, 36, 1, 0},
      {"symmetric", 1, 8, 1, 8},
      {"frequency", 3, 8, 1, 8},
  };
  return c;
}

namespace {

// Base policy whose synthesizer column equals the worker column, so the two
// probe roles differ only in what the probe makes them do.
std::shared_ptr<const PolicyParams> symmetric_base(int capacity, std::uint64_t seed) {
  const auto layout = FeatureLayout::for_dim(kVocabSize, capacity);
  const auto p = PolicyParams::create(layout, derive_seed(seed, 0xBA5E));
  Matrix base = p.base();
  const int from = layout.role_column(Role::kWorker);
  const int to = layout.role_column(Role::kSynthesizer);
  for (int v = 0; v < base.rows(); ++v) base(v, to) = base(v, from);
  return std::make_shared<const PolicyParams>(PolicyParams::from_matrix(layout, base, p.seed()));
}

Trajectory probe_episode(const CaptureProbe& probe, const AdapterStore& store,
                         const Routing& routing, const TaskInstance& task, double temperature,
                         Rng& rng) {
  Trajectory traj;
  traj.problem_id = task.id;
  const Context ctx{task.prompt, {}};
  for (int k = 0; k < probe.dominant_slots; ++k) {
    traj.turns.push_back(generate_turn(store, routing, Role::kWorker, k, ctx, probe.dominant_len,
                                       true, temperature, rng));
  }
  for (int k = 0; k < probe.minority_slots; ++k) {
    traj.turns.push_back(generate_turn(store, routing, Role::kSynthesizer, k, ctx,
                                       probe.minority_len, true, temperature, rng));
  }
  double reward = 0.0;
  for (const auto& t : traj.turns) reward += score_answer(task, turn_answer(t, task.kind)).value;
  traj.reward = reward / static_cast<double>(traj.turns.size());
  traj.reward_class = RewardClass::kPartialPass;
  return traj;
}

}  // namespace

CaptureSeries run_capture_probe(const CaptureProbe& probe, const MechanismBConfig& cfg) {
  if (probe.dominant_slots < 1 || probe.minority_slots < 1 || probe.dominant_len < 0 ||
      probe.minority_len < 0) {
    throw ConfigError("capture probe needs at least one slot per role");
  }
  TrainConfig tc = cfg.train;
  tc.routing = RoutingMode::kShared;
  const Routing routing{RoutingMode::kShared, {}};
  AdapterStore store(symmetric_base(cfg.capacity, cfg.seed));
  store.put(std::string(kSharedAdapterId), AdapterDelta::zeros_like(store.params()));
  const SurrogateOptions sopts{tc.clip_low, tc.clip_high, tc.temperature, tc.loss_agg, -1};
  const Role dominant[] = {Role::kWorker};
  const Role minority[] = {Role::kSynthesizer};
  const Role both[] = {Role::kWorker, Role::kSynthesizer};

  CaptureSeries series;
  series.probe = probe;
  Rng task_rng(derive_seed(cfg.seed, 0x7A5C));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<GroupBatch> batches;
    for (int p = 0; p < cfg.problems_per_step; ++p) {
      GroupBatch b;
      b.problem = sample_task(TaskKind::kMath, 1, task_rng);
      Rng rng(derive_seed(cfg.seed, 0xCA97, static_cast<std::uint64_t>(step),
                          static_cast<std::uint64_t>(p)));
      for (int i = 0; i < tc.group_n; ++i) {
        b.trajectories.push_back(
            probe_episode(probe, store, routing, b.problem, tc.temperature, rng));
        b.rewards.push_back(b.trajectories.back().reward);
      }
      assign_advantages(b, tc.std_epsilon);
      batches.push_back(std::move(b));
    }
    const auto samples = flatten(batches);
    AdapterDelta& shared = store.at(std::string(kSharedAdapterId));
    const auto ga = role_masked_gradient(samples, dominant, store.params(), shared, sopts);
    const auto gb = role_masked_gradient(samples, minority, store.params(), shared, sopts);
    const auto gs = role_masked_gradient(samples, both, store.params(), shared, sopts);
    CaptureStep cs;
    cs.step = step;
    cs.cos_dominant = cosine(gs.grad, ga.grad);
    cs.cos_minority = cosine(gs.grad, gb.grad);
    cs.dominant_defined = ga.grad.squared_norm() > 0.0;
    cs.defined = cs.dominant_defined && gb.grad.squared_norm() > 0.0;
    series.steps.push_back(cs);
    apply_update(shared, gs.grad, tc, step, cfg.steps);
  }

  std::vector<double> gaps;
  std::size_t wins = 0;
  series.min_cos_dominant = std::numeric_limits<double>::infinity();
  series.max_cos_dominant = -std::numeric_limits<double>::infinity();
  for (const auto& s : series.steps) {
    if (s.dominant_defined) {
      series.min_cos_dominant = std::min(series.min_cos_dominant, s.cos_dominant);
      series.max_cos_dominant = std::max(series.max_cos_dominant, s.cos_dominant);
    }
    if (!s.defined) continue;
    gaps.push_back(s.cos_dominant - s.cos_minority);
    wins += s.cos_dominant > s.cos_minority ? 1 : 0;
  }
  series.dominant_win_rate =
      gaps.empty() ? kNaN : static_cast<double>(wins) / static_cast<double>(gaps.size());
  series.gap = bootstrap_mean_ci(gaps, cfg.confidence, cfg.bootstrap_resamples,
                                 derive_seed(cfg.seed, 0xB007, gaps.size()));
  return series;
}

const CaptureSeries* MechanismBReport::find(const std::string& name) const {
  for (const auto& s : series) {
    if (s.probe.name == name) return &s;
  }
  return nullptr;
}

MechanismBReport mechanism_b_experiment(const MechanismBConfig& cfg,
                                        const std::filesystem::path& out_dir) {
  MechanismBReport report;
  for (const auto& probe : cfg.probes) report.series.push_back(run_capture_probe(probe, cfg));
  if (!out_dir.empty()) {
    write_json_file(out_dir / "mechanism_b.json", to_json(report));
    for (const auto& s : report.series) {
      std::ofstream csv(out_dir / ("capture_" + s.probe.name + ".csv"));
      csv.precision(17);
      csv << "step,cos_dominant,cos_minority,defined\n";
      for (const auto& st : s.steps) {
        csv << st.step << ',' << st.cos_dominant << ',' << st.cos_minority << ','
            << (st.defined ? 1 : 0) << '\n';
      }
    }
  }
  return report;
}

MechanismAConfig mechanism_a_config_from_json(const json& j) {
  MechanismAConfig c = default_mechanism_a();
  if (!j.is_object()) throw ConfigError("mechanism A config must be an object");
  for (const auto& [k, _] : j.items()) {
    if (k != "run" && k != "degenerate_steps" && k != "confidence" && k != "bootstrap_resamples") {
      throw ConfigError("unknown key '" + k + "' in mechanism A config");
    }
  }
  if (j.contains("run")) c.run = run_config_from_json(j["run"], c.run);
  c.degenerate_steps = j.value("degenerate_steps", c.degenerate_steps);
  c.confidence = j.value("confidence", c.confidence);
  c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
  return c;
}

MechanismBConfig mechanism_b_config_from_json(const json& j) {
  MechanismBConfig c = default_mechanism_b();
  if (!j.is_object()) throw ConfigError("mechanism B config must be an object");
  for (const auto& [k, _] : j.items()) {
    if (k != "capacity" && k != "steps" && k != "problems_per_step" && k != "seed" &&
        k != "train" && k != "confidence" && k != "bootstrap_resamples" && k != "probes") {
      throw ConfigError("unknown key '" + k + "' in mechanism B config");
    }
  }
  try {
    c.capacity = j.value("capacity", c.capacity);
    c.steps = j.value("steps", c.steps);
    c.problems_per_step = j.value("problems_per_step", c.problems_per_step);
    c.seed = j.value("seed", c.seed);
    c.confidence = j.value("confidence", c.confidence);
    c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
    if (j.contains("probes")) {
      c.probes.clear();
      for (const auto& p : j["probes"]) {
        c.probes.push_back({p.at("name").get<std::string>(), p.value("dominant_slots", 1),
                            p.value("dominant_len", 36), p.value("minority_slots", 1),
                            p.value("minority_len", 4)});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad mechanism B config: ") + e.what());
  }
  return c;
}

json to_json(const MechanismAReport& r) {
  json dyn = json::array(), sa = json::array();
  for (const auto& d : r.voting_dynamics) dyn.push_back(to_json(d));
  for (const auto& d : r.single_agent_dynamics) sa.push_back(to_json(d));
  double dmin = kNaN, dmax = kNaN;
  if (!r.degenerate.empty()) {
    dmin = *std::min_element(r.degenerate.begin(), r.degenerate.end());
    dmax = *std::max_element(r.degenerate.begin(), r.degenerate.end());
  }
  return {{"steps", r.steps.size()},
          {"standard_mean", num(r.standard_mean)},
          {"null_mean", num(r.null_mean)},
          {"difference", ci_json(r.difference)},
          {"degenerate_steps", r.degenerate.size()},
          {"degenerate_min", num(dmin)},
          {"degenerate_max", num(dmax)},
          {"generator_chi2_ratio", num(r.generator_chi2_ratio)},
          {"aggregator_chi2_ratio", num(r.aggregator_chi2_ratio)},
          {"grad_norm_vs_single_agent", num(r.grad_norm_vs_single_agent)},
          {"voting_peak_accuracy", r.voting_peak_accuracy},
          {"single_agent_peak_accuracy", r.single_agent_peak_accuracy},
          {"voting_dynamics", dyn},
          {"single_agent_dynamics", sa}};
}

json to_json(const MechanismBReport& r) {
  json out = json::array();
  for (const auto& s : r.series) {
    std::size_t defined = 0;
    for (const auto& st : s.steps) defined += st.defined ? 1 : 0;
    out.push_back({{"name", s.probe.name},
                   {"dominant_slots", s.probe.dominant_slots},
                   {"dominant_len", s.probe.dominant_len},
                   {"minority_slots", s.probe.minority_slots},
                   {"minority_len", s.probe.minority_len},
                   {"steps", s.steps.size()},
                   {"defined_steps", defined},
                   {"dominant_win_rate", num(s.dominant_win_rate)},
                   {"gap", ci_json(s.gap)},
                   {"min_cos_dominant", num(s.min_cos_dominant)},
                   {"max_cos_dominant", num(s.max_cos_dominant)}});
  }
  return {{"probes", out}};
}

}  // namespace rolelab
