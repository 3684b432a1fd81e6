#pragma once

// Brute-force reference implementations and randomized checks shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "rolelab/diagnostics.hpp"

namespace rolelab::testing {

// ---- diagnostics oracles ------------------------------------------------

inline double oracle_chi2(const std::vector<double>& roll, const std::vector<double>& cur) {
  std::vector<double> terms;
  for (std::size_t i = 0; i < roll.size(); ++i) {
    const double r = std::exp(cur[i]) / std::exp(roll[i]);
    terms.push_back(r * r - 2.0 * r + 1.0);
  }
  return std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
}

inline double oracle_perplexity(const std::vector<double>& lps) {
  // geometric mean of 1/p
  double log_sum = 0.0;
  for (double lp : lps) log_sum += std::log(1.0 / std::exp(lp));
  return std::exp(log_sum / static_cast<double>(lps.size()));
}

inline double oracle_collapse(const Series& s) {
  std::vector<double> v;
  for (const auto& p : s) v.push_back(p.second);
  std::sort(v.begin(), v.end());
  return s.front().second - v.front();
}

inline PeakRatio oracle_peak(const Series& s) {
  const auto it = std::max_element(s.begin(), s.end(),
                                   [](const auto& a, const auto& b) { return a.second < b.second; });
  return {it->second / s.front().second, it->first};
}

inline Series random_series(Rng& rng, bool positive_first) {
  Series s;
  int step = static_cast<int>(rng.below(5));
  const auto n = 1 + rng.below(40);
  for (std::uint64_t i = 0; i < n; ++i) {
    double v = rng.uniform(-3.0, 10.0);
    if (rng.uniform() < 0.2 && !s.empty()) v = s[rng.below(s.size())].second;  // ties
    s.emplace_back(step, v);
    step += 1 + static_cast<int>(rng.below(4));
  }
  if (positive_first) s.front().second = rng.uniform(0.1, 5.0);
  return s;
}

struct OracleAgreement {
  double chi2 = 0.0;
  double perplexity = 0.0;
  double collapse = 0.0;
  double peak = 0.0;
  bool peak_steps_match = true;
};

// Worst relative disagreement between library and oracle over `cases` random
// inputs of each kind.
inline OracleAgreement diagnostics_vs_oracles(int cases, std::uint64_t seed) {
  Rng rng(seed);
  OracleAgreement out;
  for (int c = 0; c < cases; ++c) {
    const auto n = 1 + rng.below(50);
    std::vector<double> roll, cur;
    for (std::uint64_t i = 0; i < n; ++i) {
      roll.push_back(std::log(rng.uniform(0.01, 1.0)));
      cur.push_back(std::log(rng.uniform(0.01, 1.0)));
    }
    out.chi2 = std::max(out.chi2, rel_err(token_chi2(roll, cur), oracle_chi2(roll, cur)));
    out.perplexity =
        std::max(out.perplexity, rel_err(perplexity_from_log_probs(cur), oracle_perplexity(cur)));

    const auto s = random_series(rng, false);
    out.collapse = std::max(out.collapse, std::abs(entropy_collapse_depth(s) - oracle_collapse(s)));

    const auto p = random_series(rng, true);
    const auto got = peak_over_first(p);
    const auto want = oracle_peak(p);
    out.peak = std::max(out.peak, rel_err(got.ratio, want.ratio));
    out.peak_steps_match = out.peak_steps_match && got.step == want.step;
  }
  return out;
}

// ---- gradient checks ----------------------------------------------------

struct GradCheck {
  int instances = 0;
  double worst_rel = 0.0;    // over entries with magnitude >= kFloor
  double worst_small = 0.0;  // absolute error on the rest
  static constexpr double kFloor = 1e-6;

  void add(double analytic, double numeric) {
    if (std::max(std::abs(analytic), std::abs(numeric)) >= kFloor) {
      worst_rel = std::max(worst_rel, std::abs(analytic - numeric) /
                                          std::max(std::abs(analytic), std::abs(numeric)));
    } else {
      worst_small = std::max(worst_small, std::abs(analytic - numeric));
    }
  }
};

template <typename F>
double central_difference(AdapterDelta& a, int k, int c, double h, F&& f) {
  const double keep = a.delta(k, c);
  a.delta(k, c) = keep + h;
  const double up = f(a);
  a.delta(k, c) = keep - h;
  const double down = f(a);
  a.delta(k, c) = keep;
  return (up - down) / (2 * h);
}

// grad_log_prob against central differences on every entry.
inline GradCheck check_grad_log_prob(int instances, std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  GradCheck out;
  for (int inst = 0; inst < instances; ++inst) {
    const auto q = small_policy(derive_seed(seed, static_cast<std::uint64_t>(inst)), 64);
    auto ad = random_adapter(*q, 0.5, rng);
    const auto phi = random_phi(q->layout(), rng);
    const Token t = static_cast<Token>(rng.below(kVocabSize));
    const Matrix g = grad_log_prob(*q, ad, phi, t);
    for (int k = 0; k < q->vocab(); ++k) {
      for (int c = 0; c < q->dim(); ++c) {
        out.add(g(k, c), central_difference(ad, k, c, h, [&](const AdapterDelta& a) {
                  return log_prob(*q, a, phi, t);
                }));
      }
    }
    ++out.instances;
  }
  return out;
}

// Unclipped surrogate gradient (clip range wide open, current adapter moved
// away from the rollout one so ratios differ from 1) against central
// differences of surrogate_loss on every support entry plus random others.
inline GradCheck check_surrogate_gradient(int instances, std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  GradCheck out;
  const WorkflowKind kinds[] = {WorkflowKind::kSingleAgent, WorkflowKind::kVoting,
                                WorkflowKind::kEvalOpt, WorkflowKind::kOrchWorkers};
  for (int inst = 0; inst < instances; ++inst) {
    const auto spec = build_workflow(kinds[inst % 4]);
    const auto mode = inst % 2 ? RoutingMode::kShared : RoutingMode::kIsolated;
    const auto params = small_policy(derive_seed(seed, 1, static_cast<std::uint64_t>(inst)));
    const auto store = perturbed_store(params, spec, mode, 0.3, rng);
    LengthCaps caps;
    caps.response = 6;
    const auto batches = rollout_batches(spec, store, {mode, {}}, 2, 4,
                                         derive_seed(seed, 2, static_cast<std::uint64_t>(inst)), caps);
    const auto samples = flatten(batches);
    const auto roles = spec.roles();
    const Role role = roles[rng.below(roles.size())];
    const std::vector<Role> masked =
        mode == RoutingMode::kShared ? roles : std::vector<Role>{role};
    AdapterDelta cur = store.at(route_policy(mode, role));
    Matrix noise = random_matrix(cur.delta.rows(), cur.delta.cols(), 0.05, rng);
    cur.delta += noise;

    SurrogateOptions opts;
    opts.clip_low = 1e9;
    opts.clip_high = 1e9;
    opts.loss_agg = inst % 3 == 0 ? LossAggregation::kTurnTokenMean
                                  : LossAggregation::kTrajectoryTokenMean;
    const auto g = role_masked_gradient(samples, masked, *params, cur, opts).grad;
    auto loss = [&](const AdapterDelta& a) {
      return surrogate_loss(samples, masked, *params, a, opts);
    };
    std::vector<std::pair<int, int>> entries;
    for (int k = 0; k < g.rows(); ++k) {
      for (int c = 0; c < g.cols(); ++c) {
        if (g(k, c) != 0.0) entries.emplace_back(k, c);
      }
    }
    rng.shuffle(entries.begin(), entries.end());
    if (entries.size() > 40) entries.resize(40);
    for (int extra = 0; extra < 10; ++extra) {
      entries.emplace_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(g.rows()))),
                           static_cast<int>(rng.below(static_cast<std::uint64_t>(g.cols()))));
    }
    for (const auto& [k, c] : entries) out.add(g(k, c), central_difference(cur, k, c, h, loss));
    ++out.instances;
  }
  return out;
}

// ---- masking ------------------------------------------------------------

// Replaces every token of other roles (same lengths) and their stored
// log-probs and entropies.
inline std::vector<GroupBatch> scramble_other_roles(std::vector<GroupBatch> batches, Role keep,
                                                    Rng& rng) {
  for (auto& b : batches) {
    for (auto& t : b.trajectories) {
      for (auto& turn : t.turns) {
        if (turn.role == keep) continue;
        for (std::size_t i = 0; i < turn.tokens.size(); ++i) {
          turn.tokens[i] = static_cast<Token>(rng.below(kVocabSize));
          turn.rollout_log_probs[i] = std::log(rng.uniform(0.01, 1.0));
          turn.train_log_probs[i] = std::log(rng.uniform(0.01, 1.0));
          turn.rollout_entropies[i] = rng.uniform(0.0, 3.0);
        }
      }
    }
  }
  return batches;
}

struct MaskingCheck {
  int instances = 0;
  bool isolated_bit_identical = true;
  double shared_sum_error = 0.0;  // max abs entry difference
};

inline MaskingCheck check_masking(int instances, std::uint64_t seed) {
  Rng rng(seed);
  MaskingCheck out;
  const WorkflowKind kinds[] = {WorkflowKind::kVoting, WorkflowKind::kEvalOpt,
                                WorkflowKind::kOrchWorkers};
  for (int inst = 0; inst < instances; ++inst) {
    const auto spec = build_workflow(kinds[inst % 3]);
    const auto params = small_policy(derive_seed(seed, 3, static_cast<std::uint64_t>(inst)));
    LengthCaps caps;
    caps.response = 8;
    const SurrogateOptions opts;

    // Isolated: scrambling other roles leaves each role's gradient untouched.
    {
      const auto store = perturbed_store(params, spec, RoutingMode::kIsolated, 0.3, rng);
      const auto batches = rollout_batches(spec, store, {RoutingMode::kIsolated, {}}, 3, 4,
                                           derive_seed(seed, 4, static_cast<std::uint64_t>(inst)),
                                           caps);
      for (Role r : spec.roles()) {
        const std::vector<Role> one{r};
        AdapterDelta moved = store.at(route_policy(RoutingMode::kIsolated, r));
        moved.delta += random_matrix(moved.delta.rows(), moved.delta.cols(), 0.1, rng);
        const auto before = role_masked_gradient(flatten(batches), one, *params, moved, opts);
        const auto scrambled = scramble_other_roles(batches, r, rng);
        const auto after = role_masked_gradient(flatten(scrambled), one, *params, moved, opts);
        out.isolated_bit_identical = out.isolated_bit_identical && before.grad == after.grad &&
                                     before.loss == after.loss;
      }
    }

    // Shared: full gradient equals the sum of per-role masked gradients.
    {
      const auto store = perturbed_store(params, spec, RoutingMode::kShared, 0.3, rng);
      const auto batches = rollout_batches(spec, store, {RoutingMode::kShared, {}}, 3, 4,
                                           derive_seed(seed, 5, static_cast<std::uint64_t>(inst)),
                                           caps);
      AdapterDelta moved = store.at(std::string(kSharedAdapterId));
      moved.delta += random_matrix(moved.delta.rows(), moved.delta.cols(), 0.1, rng);
      const auto samples = flatten(batches);
      const auto roles = spec.roles();
      const auto full = role_masked_gradient(samples, roles, *params, moved, opts).grad;
      Matrix sum(full.rows(), full.cols());
      for (Role r : roles) {
        const std::vector<Role> one{r};
        sum += role_masked_gradient(samples, one, *params, moved, opts).grad;
      }
      for (std::size_t i = 0; i < sum.size(); ++i) {
        out.shared_sum_error = std::max(out.shared_sum_error, std::abs(sum.data()[i] - full.data()[i]));
      }
    }
    ++out.instances;
  }
  return out;
}

// ---- advantages ---------------------------------------------------------

struct AdvantageCheck {
  int vectors = 0;
  double worst_mean = 0.0;
  bool zero_variance_exact = true;
  double example_top = 0.0;
  double example_rest = 0.0;
};

inline AdvantageCheck check_advantages(int vectors, std::uint64_t seed) {
  Rng rng(seed);
  AdvantageCheck out;
  for (int v = 0; v < vectors; ++v) {
    std::vector<double> r(8);
    const auto style = rng.below(4);
    for (double& x : r) {
      if (style == 0) x = rng.uniform(-1.0, 1.0);
      if (style == 1) x = static_cast<double>(rng.below(2));
      if (style == 2) x = std::vector<double>{-0.1, 0.0, 1.0}[rng.below(3)];
      if (style == 3) x = rng.uniform(-1e3, 1e3);
    }
    const auto a = group_advantages(r, 1e-6);
    double mean = 0.0;
    for (double x : a) mean += x;
    out.worst_mean = std::max(out.worst_mean, std::abs(mean / 8.0));

    const std::vector<double> flat(8, r[0]);
    for (double x : group_advantages(flat, 1e-6)) out.zero_variance_exact &= x == 0.0;
    ++out.vectors;
  }
  std::vector<double> ex(8, 0.0);
  ex[0] = 1.0;
  const auto a = group_advantages(ex, 1e-6);
  out.example_top = a[0];
  out.example_rest = a[1];
  return out;
}

}  // namespace rolelab::testing
