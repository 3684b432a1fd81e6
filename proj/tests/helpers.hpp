#pragma once

#include <cmath>
#include <memory>

#include "rolelab/grpo.hpp"
#include "rolelab/policy.hpp"
#include "rolelab/workflow.hpp"

namespace rolelab::testing {

inline Matrix random_matrix(int rows, int cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(-scale, scale);
  return m;
}

inline std::shared_ptr<const PolicyParams> small_policy(std::uint64_t seed, int dim = 64,
                                                        double prior = 1.0) {
  const auto layout = FeatureLayout::for_dim(kVocabSize, dim);
  return std::make_shared<const PolicyParams>(PolicyParams::create(layout, seed, prior));
}

inline AdapterDelta random_adapter(const PolicyParams& p, double scale, Rng& rng) {
  AdapterDelta a = AdapterDelta::zeros_like(p);
  a.delta = random_matrix(p.vocab(), p.dim(), scale, rng);
  return a;
}

// Random sparse phi in the policy's layout: a role, a last token, a few bag
// columns and a position bucket.
inline ContextFeatures random_phi(const FeatureLayout& layout, Rng& rng) {
  Context ctx;
  const auto n = 2 + rng.below(6);
  for (std::uint64_t i = 0; i < n; ++i) ctx.task.push_back(static_cast<Token>(rng.below(kVocabSize)));
  const auto role = static_cast<Role>(rng.below(kNumRoles));
  std::vector<Token> prefix;
  const auto len = rng.below(12);
  for (std::uint64_t i = 0; i < len; ++i) prefix.push_back(static_cast<Token>(rng.below(kVocabSize)));
  return encode_context(layout, role, ctx, prefix);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// One store per workflow with every adapter randomly perturbed so roles
// differ from the base.
inline AdapterStore perturbed_store(std::shared_ptr<const PolicyParams> params,
                                    const WorkflowSpec& spec, RoutingMode mode, double scale,
                                    Rng& rng) {
  AdapterStore store = AdapterStore::for_workflow(std::move(params), spec, mode);
  for (const auto& id : adapter_ids(spec, mode)) {
    store.put(id, random_adapter(store.params(), scale, rng));
  }
  return store;
}

inline std::vector<GroupBatch> rollout_batches(const WorkflowSpec& spec, const AdapterStore& store,
                                               const Routing& routing, int problems, int n,
                                               std::uint64_t seed, LengthCaps caps = {}) {
  std::vector<GroupBatch> out;
  Rng task_rng(seed);
  for (int p = 0; p < problems; ++p) {
    const auto task = sample_task(TaskKind::kMath, 1, task_rng);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p)));
    auto g = collect_group(spec, store, routing, task, n, caps, 0.7, rng);
    // Rewards from the toy policy are often all equal; spread them so every
    // group has a usable advantage.
    for (int i = 0; i < n; ++i) g.rewards[static_cast<std::size_t>(i)] = task_rng.uniform();
    assign_advantages(g, 1e-6);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace rolelab::testing
