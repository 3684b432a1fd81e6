#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "rolelab/mechanisms.hpp"

using namespace rolelab;
using namespace rolelab::testing;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("bootstrap_mean_ci") {
  const std::vector<double> flat(50, 2.5);
  const auto c = bootstrap_mean_ci(flat, 0.99, 500, 1);
  CHECK(c.mean == 2.5);
  CHECK(c.low == 2.5);
  CHECK(c.high == 2.5);

  CHECK(std::isnan(bootstrap_mean_ci(std::vector<double>{}, 0.95, 100, 1).mean));

  // Normal sample: the interval should sit near mean +- z * sd / sqrt(n).
  std::mt19937_64 gen(4);
  std::normal_distribution<double> normal(1.0, 1.0);
  std::vector<double> v;
  for (int i = 0; i < 400; ++i) v.push_back(normal(gen));
  double m = 0.0, ss = 0.0;
  for (double x : v) m += x;
  m /= 400.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double se = std::sqrt(ss / 400.0) / 20.0;
  const auto ci = bootstrap_mean_ci(v, 0.95, 4000, 9);
  CHECK(ci.mean == doctest::Approx(m).epsilon(1e-12));
  CHECK(ci.low < m);
  CHECK(ci.high > m);
  CHECK((ci.high - ci.low) == doctest::Approx(2 * 1.96 * se).epsilon(0.15));
  CHECK(bootstrap_mean_ci(v, 0.95, 4000, 9).low == ci.low);
}

TEST_CASE("amplification_ratio") {
  Rng rng(2);
  const Matrix g = random_matrix(32, 64, 1.0, rng);
  std::vector<Matrix> same{g, g, g};
  CHECK(amplification_ratio(same) == doctest::Approx(3.0).epsilon(1e-13));

  // Orthogonal slots with equal norm: exactly sqrt(3).
  std::vector<Matrix> orth(3, Matrix(4, 4));
  orth[0](0, 0) = 2.0;
  orth[1](1, 2) = -2.0;
  orth[2](3, 1) = 2.0;
  CHECK(amplification_ratio(orth) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-14));

  // One live slot: ||g|| / sqrt(||g||^2 / 3) = sqrt(3).
  std::vector<Matrix> one{g, Matrix(32, 64), Matrix(32, 64)};
  CHECK(amplification_ratio(one) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-13));

  // Cancelling slots.
  Matrix neg = g;
  neg *= -1.0;
  std::vector<Matrix> cancel{g, neg};
  CHECK(amplification_ratio(cancel) == 0.0);

  std::vector<Matrix> zeros(3, Matrix(2, 2));
  CHECK(std::isnan(amplification_ratio(zeros)));
}

TEST_CASE("slot gradients add up to the role gradient") {
  const auto params = small_policy(5);
  const auto spec = build_workflow(WorkflowKind::kVoting);
  Rng rng(8);
  const auto store = perturbed_store(params, spec, RoutingMode::kIsolated, 0.4, rng);
  const Routing routing{RoutingMode::kIsolated, {}};
  const auto batches = rollout_batches(spec, store, routing, 4, 4, 21, LengthCaps{.response = 10});
  const auto samples = flatten(batches);
  const auto& gen = store.at("generator");
  const SurrogateOptions opts;
  const auto grads = slot_gradients(samples, Role::kGenerator, 3, *params, gen, opts);
  REQUIRE(grads.size() == 3);
  Matrix sum(gen.delta.rows(), gen.delta.cols());
  for (const auto& g : grads) sum += g;
  const Role roles[] = {Role::kGenerator};
  const auto whole = role_masked_gradient(samples, roles, *params, gen, opts).grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < sum.data().size(); ++i) {
    worst = std::max(worst, std::abs(sum.data()[i] - whole.data()[i]));
  }
  CHECK(worst <= 1e-12);

  // The shuffled null keeps each slot's gradient shape but permutes the
  // advantages, so it consumes the rng and stays deterministic.
  Rng a(3), b(3);
  const auto n1 = shuffled_slot_gradients(samples, Role::kGenerator, 3, *params, gen, opts, a);
  const auto n2 = shuffled_slot_gradients(samples, Role::kGenerator, 3, *params, gen, opts, b);
  for (int k = 0; k < 3; ++k) CHECK(n1[k] == n2[k]);
  CHECK(std::isfinite(amplification_ratio(n1)));
}

TEST_CASE("small mechanism A run") {
  auto cfg = default_mechanism_a();
  CHECK(cfg.run.workflow == WorkflowKind::kVoting);
  CHECK(cfg.run.train.routing == RoutingMode::kIsolated);
  CHECK(cfg.run.train.minibatch_unit == MinibatchUnit::kRoleTurn);
  cfg.run.capacity = 64;
  cfg.run.steps = 4;
  cfg.run.validation_problems = 8;
  cfg.run.caps.response = 10;
  cfg.run.train.problems_per_step = 4;
  cfg.run.train.group_n = 4;
  cfg.run.train.minibatch = 8;
  cfg.run.train.warmup_steps = 2;
  cfg.run.train.validation_interval = 2;
  cfg.degenerate_steps = 3;
  cfg.bootstrap_resamples = 200;

  const auto dir = fs::temp_directory_path() / "rolelab_mech_a";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto r = mechanism_a_experiment(cfg, dir);
  CHECK(r.steps.size() <= 4);
  CHECK_FALSE(r.steps.empty());
  CHECK_FALSE(r.degenerate.empty());
  for (double d : r.degenerate) CHECK(std::abs(d - 3.0) <= 1e-12);
  for (const auto& s : r.steps) {
    CHECK(s.standard >= 0.0);
    CHECK(s.standard <= 3.0 + 1e-12);
    CHECK(s.null_ratio <= 3.0 + 1e-12);
  }
  CHECK(r.difference.low <= r.difference.high);
  for (const char* f : {"mechanism_a.json", "amplification.csv", "role_dynamics.csv",
                        "voting_ip/metrics.csv", "single_agent/summary.json",
                        "degenerate/summary.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(to_json(r)["degenerate_steps"] == r.degenerate.size());
  fs::remove_all(dir);

  auto bad = cfg;
  bad.run.train.routing = RoutingMode::kShared;
  CHECK_THROWS_AS(mechanism_a_experiment(bad), ConfigError);
}

TEST_CASE("capture probes") {
  auto cfg = default_mechanism_b();
  CHECK(cfg.train.routing == RoutingMode::kShared);
  REQUIRE(cfg.probes.size() == 4);
  cfg.capacity = 64;
  cfg.steps = 6;
  cfg.problems_per_step = 4;
  cfg.train.group_n = 4;
  cfg.train.warmup_steps = 2;
  cfg.bootstrap_resamples = 200;

  // With no minority tokens the shared gradient is the dominant gradient.
  const auto z = run_capture_probe({"zero_minority", 1, 12, 1, 0}, cfg);
  REQUIRE(z.steps.size() == 6);
  for (const auto& s : z.steps) {
    CHECK_FALSE(s.defined);
    if (s.dominant_defined) CHECK(std::abs(s.cos_dominant - 1.0) <= 1e-12);
  }
  CHECK(std::isnan(z.dominant_win_rate));

  const auto t = run_capture_probe({"token_mass", 1, 24, 1, 4}, cfg);
  for (const auto& s : t.steps) {
    if (!s.defined) continue;
    CHECK(s.cos_dominant >= -1.0 - 1e-12);
    CHECK(s.cos_dominant <= 1.0 + 1e-12);
  }
  const auto again = run_capture_probe({"token_mass", 1, 24, 1, 4}, cfg);
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    CHECK(again.steps[i].cos_dominant == t.steps[i].cos_dominant);
  }

  CHECK_THROWS_AS(run_capture_probe({"none", 0, 4, 1, 4}, cfg), ConfigError);
}

TEST_CASE("mechanism config parsing") {
  const auto a = mechanism_a_config_from_json(json{{"degenerate_steps", 5},
                                                   {"run", {{"steps", 12}}}});
  CHECK(a.degenerate_steps == 5);
  CHECK(a.run.steps == 12);
  CHECK(a.run.train.minibatch_unit == MinibatchUnit::kRoleTurn);
  CHECK_THROWS_AS(mechanism_a_config_from_json(json{{"degenerate", 5}}), ConfigError);

  const auto b = mechanism_b_config_from_json(
      json{{"steps", 9}, {"probes", {{{"name", "p"}, {"minority_len", 2}}}}});
  CHECK(b.steps == 9);
  REQUIRE(b.probes.size() == 1);
  CHECK(b.probes[0].minority_len == 2);
  CHECK(b.probes[0].dominant_len == 36);
  CHECK_THROWS_AS(mechanism_b_config_from_json(json{{"probe", 1}}), ConfigError);
  CHECK_THROWS_AS(mechanism_b_config_from_json(json{{"probes", {{{"len", 2}}}}}), ConfigError);
}
