#include "doctest.h"

#include "helpers.hpp"

using namespace rolelab;
using namespace rolelab::testing;

namespace {

// Deterministic base: each token is forced by the previous one.
std::shared_ptr<const PolicyParams> scripted(const std::vector<std::pair<Token, Token>>& next) {
  const auto layout = FeatureLayout::for_dim(kVocabSize, 64);
  Matrix base(kVocabSize, 64);
  for (const auto& [prev, t] : next) base(t, layout.last_token_column(prev)) = 80.0;
  return std::make_shared<const PolicyParams>(PolicyParams::from_matrix(layout, base));
}

std::shared_ptr<const PolicyParams> verdict_policy(Token verdict) {
  return scripted({{tok::kBos, tok::kBoxOpen},
                   {tok::kBoxOpen, verdict},
                   {verdict, tok::kBoxClose},
                   {tok::kBoxClose, tok::kEos}});
}

TaskInstance task35() {
  const long ops[] = {3, 5};
  return make_math_task(ops);
}

Turn text_turn(Role role, int slot, std::vector<Token> tokens) {
  Turn t;
  t.role = role;
  t.slot = slot;
  t.tokens = std::move(tokens);
  return t;
}

std::vector<Token> boxed_tokens(long v) {
  std::vector<Token> out{tok::kSo, tok::kBoxOpen};
  for (Token d : encode_integer(v)) out.push_back(d);
  out.push_back(tok::kBoxClose);
  return out;
}

}  // namespace

TEST_CASE("build_workflow shapes") {
  const auto v = build_workflow(WorkflowKind::kVoting);
  REQUIRE(v.slots.size() == 2);
  CHECK(v.slots[0].role == Role::kGenerator);
  CHECK(v.slots[0].multiplicity == 3);
  CHECK(v.slots[1].role == Role::kAggregator);
  CHECK(v.slots[1].multiplicity == 1);

  const auto sa = build_workflow(WorkflowKind::kSingleAgent);
  REQUIRE(sa.slots.size() == 1);
  CHECK(sa.slots[0].role == Role::kGenerator);
  CHECK(sa.roles() == std::vector<Role>{Role::kGenerator});

  const auto ow = build_workflow(WorkflowKind::kOrchWorkers);
  CHECK(ow.multiplicity(Role::kOrchestrator) == 1);
  CHECK(ow.multiplicity(Role::kWorker) == 3);
  CHECK(ow.multiplicity(Role::kSynthesizer) == 1);

  const auto eo = build_workflow(WorkflowKind::kEvalOpt, {.revision_cap = 0});
  CHECK(eo.revision_cap == 0);
  CHECK(eo.roles() == std::vector<Role>{Role::kGenerator, Role::kEvaluator});

  CHECK_THROWS_AS(build_workflow(WorkflowKind::kEvalOpt, {.revision_cap = -1}), ConfigError);
  CHECK_THROWS_AS(build_workflow(WorkflowKind::kVoting, {.voting_candidates = 2}), ConfigError);
  CHECK_THROWS_AS(build_workflow(WorkflowKind::kOrchWorkers, {.workers = 4}), ConfigError);
  CHECK_THROWS_AS(parse_workflow_kind("debate"), ConfigError);
  CHECK(parse_workflow_kind("Orch-Workers") == WorkflowKind::kOrchWorkers);
}

TEST_CASE("route_policy") {
  CHECK(route_policy(RoutingMode::kIsolated, Role::kWorker) ==
        route_policy(RoutingMode::kIsolated, Role::kWorker));
  CHECK(route_policy(RoutingMode::kShared, Role::kEvaluator) == "shared");
  CHECK(route_policy(RoutingMode::kShared, Role::kGenerator) == "shared");
  CHECK(route_policy(RoutingMode::kIsolated, Role::kGenerator) !=
        route_policy(RoutingMode::kIsolated, Role::kEvaluator));

  for (auto kind : {WorkflowKind::kEvalOpt, WorkflowKind::kVoting, WorkflowKind::kOrchWorkers,
                    WorkflowKind::kSingleAgent}) {
    const auto spec = build_workflow(kind);
    CHECK(adapter_ids(spec, RoutingMode::kShared).size() == 1);
    const std::size_t expect = kind == WorkflowKind::kOrchWorkers   ? 3
                               : kind == WorkflowKind::kSingleAgent ? 1
                                                                    : 2;
    CHECK(adapter_ids(spec, RoutingMode::kIsolated).size() == expect);
  }

  Routing r{RoutingMode::kIsolated, {{Role::kGenerator, "sa"}}};
  CHECK(r.adapter_for(Role::kGenerator) == "sa");
  CHECK(r.adapter_for(Role::kAggregator) == "aggregator");
}

TEST_CASE("episode turn counts and wiring") {
  Rng rng(1);
  const auto params = small_policy(3);
  const LengthCaps caps{.response = 12};
  for (auto kind : {WorkflowKind::kVoting, WorkflowKind::kOrchWorkers, WorkflowKind::kSingleAgent,
                    WorkflowKind::kEvalOpt}) {
    const auto spec = build_workflow(kind);
    for (auto mode : {RoutingMode::kShared, RoutingMode::kIsolated}) {
      const auto store = perturbed_store(params, spec, mode, 0.5, rng);
      const Routing routing{mode, {}};
      for (int i = 0; i < 20; ++i) {
        const auto task = sample_task(TaskKind::kMath, 1, rng);
        Rng ep(derive_seed(9, static_cast<std::uint64_t>(i)));
        const auto traj = run_episode(spec, store, routing, task, caps, 0.7, ep);
        const auto n = traj.turns.size();
        switch (kind) {
          case WorkflowKind::kVoting: CHECK(n == 4); break;
          case WorkflowKind::kOrchWorkers: CHECK(n == 5); break;
          case WorkflowKind::kSingleAgent: CHECK(n == 1); break;
          case WorkflowKind::kEvalOpt:
            CHECK(n >= 2);
            CHECK(n <= static_cast<std::size_t>(2 * (1 + spec.revision_cap)));
            break;
        }
        for (const auto& t : traj.turns) {
          CHECK(t.tokens.size() == t.rollout_log_probs.size());
          CHECK(t.tokens.size() == t.rollout_entropies.size());
          CHECK(t.tokens.size() == t.train_log_probs.size());
          CHECK((t.finish == FinishReason::kLength) == (t.tokens.size() == 12));
          for (double h : t.rollout_entropies) CHECK(h >= 0.0);
        }
        if (kind == WorkflowKind::kVoting) {
          for (int k = 0; k < 3; ++k) {
            CHECK(traj.turns[k].role == Role::kGenerator);
            CHECK(traj.turns[k].slot == k);
            CHECK(traj.turns[k].context.visible.empty());
            CHECK(traj.turns[k].context.task == task.prompt);
          }
          CHECK(traj.turns[3].role == Role::kAggregator);
          REQUIRE(traj.turns[3].context.visible.size() == 3);
          for (int k = 0; k < 3; ++k) {
            auto seg = traj.turns[3].context.visible[k];
            CHECK(seg.front() == digit_token(k + 1));
            seg.erase(seg.begin());
            CHECK(seg == traj.turns[k].tokens);
          }
        }
        if (kind == WorkflowKind::kOrchWorkers) {
          for (int k = 1; k <= 3; ++k) {
            REQUIRE(traj.turns[k].context.visible.size() == 1);
            CHECK(traj.turns[k].context.visible[0] == traj.turns[0].tokens);
          }
        }
        CHECK(replay_deviation(traj, store, routing, 0.7) <= 1e-12);
        const auto outcome = score_answer(task, traj.final_answer);
        CHECK(traj.reward == outcome.value);
      }
    }
  }
}

TEST_CASE("episodes are deterministic") {
  const auto params = small_policy(4);
  Rng rng(2);
  const auto spec = build_workflow(WorkflowKind::kOrchWorkers);
  const auto store = perturbed_store(params, spec, RoutingMode::kIsolated, 0.5, rng);
  const auto task = task35();
  Rng a(77), b(77);
  const auto x = run_episode(spec, store, {RoutingMode::kIsolated, {}}, task, {}, 0.7, a);
  const auto y = run_episode(spec, store, {RoutingMode::kIsolated, {}}, task, {}, 0.7, b);
  CHECK(x == y);
}

TEST_CASE("eval-opt revision control") {
  const auto task = task35();
  const Routing routing{RoutingMode::kIsolated, {}};

  SUBCASE("correct verdict stops after two turns") {
    const auto spec = build_workflow(WorkflowKind::kEvalOpt);
    const auto store = AdapterStore::for_workflow(verdict_policy(tok::kCorrect), spec,
                                                  RoutingMode::kIsolated);
    Rng rng(1);
    const auto traj = run_episode(spec, store, routing, task, {}, 0.7, rng);
    REQUIRE(traj.turns.size() == 2);
    CHECK(traj.turns[1].text() == "\\boxed{Correct}");
    CHECK(traj.turns[1].context.visible.at(0) == traj.turns[0].tokens);
  }

  SUBCASE("incorrect verdict revises up to the cap") {
    for (int cap : {0, 1, 3}) {
      const auto spec = build_workflow(WorkflowKind::kEvalOpt, {.revision_cap = cap});
      const auto store = AdapterStore::for_workflow(verdict_policy(tok::kIncorrect), spec,
                                                    RoutingMode::kIsolated);
      Rng rng(1);
      const auto traj = run_episode(spec, store, routing, task, {}, 0.7, rng);
      CHECK(traj.turns.size() == static_cast<std::size_t>(2 * (1 + cap)));
      // Evaluator sees only the latest answer.
      for (const auto& t : traj.turns) {
        if (t.role == Role::kEvaluator) CHECK(t.context.visible.size() == 1);
      }
    }
  }

  SUBCASE("unknown verdict ends the episode") {
    const auto spec = build_workflow(WorkflowKind::kEvalOpt);
    const auto store =
        AdapterStore::for_workflow(verdict_policy(tok::kPlan), spec, RoutingMode::kIsolated);
    Rng rng(1);
    CHECK(run_episode(spec, store, routing, task, {}, 0.7, rng).turns.size() == 2);
  }
}

TEST_CASE("length caps") {
  // EOS is never preferred, so every turn runs to its cap.
  const auto params = scripted({{tok::kBos, tok::kSo}, {tok::kSo, tok::kSo}});
  const auto spec = build_workflow(WorkflowKind::kVoting);
  const auto store = AdapterStore::for_workflow(params, spec, RoutingMode::kShared);
  LengthCaps caps{.response = 7, .per_role = {{Role::kAggregator, 3}}};
  Rng rng(3);
  const auto traj = run_episode(spec, store, {RoutingMode::kShared, {}}, task35(), caps, 0.7, rng);
  for (const auto& t : traj.turns) {
    CHECK(t.finish == FinishReason::kLength);
    CHECK(t.tokens.size() == (t.role == Role::kAggregator ? 3u : 7u));
  }
  CHECK_FALSE(traj.final_answer.has_value());
  CHECK(traj.reward == -0.1);

  // Fixed-length turns keep going through EOS.
  const auto eos = scripted({{tok::kBos, tok::kEos}, {tok::kEos, tok::kEos}});
  AdapterStore s2 = AdapterStore::for_workflow(eos, build_workflow(WorkflowKind::kSingleAgent),
                                               RoutingMode::kShared);
  Rng r2(4);
  const auto stop = generate_turn(s2, {RoutingMode::kShared, {}}, Role::kGenerator, 0, {}, 9,
                                  false, 0.7, r2);
  CHECK(stop.tokens.size() == 1);
  CHECK(stop.finish == FinishReason::kStop);
  const auto full = generate_turn(s2, {RoutingMode::kShared, {}}, Role::kGenerator, 0, {}, 9,
                                  true, 0.7, r2);
  CHECK(full.tokens.size() == 9);
  CHECK(full.finish == FinishReason::kLength);
}

TEST_CASE("routing miss") {
  const auto params = small_policy(1);
  AdapterStore store(params);
  store.put("generator", AdapterDelta::zeros_like(*params));
  Rng rng(1);
  CHECK_THROWS_AS(run_episode(build_workflow(WorkflowKind::kVoting), store,
                              {RoutingMode::kIsolated, {}}, task35(), {}, 0.7, rng),
                  RoutingMiss);
  CHECK_THROWS_AS(run_episode(build_workflow(WorkflowKind::kSingleAgent), store,
                              {RoutingMode::kIsolated, {}}, task35(), {}, 0.0, rng),
                  ConfigError);
}

TEST_CASE("identical generators") {
  const auto params = small_policy(2);
  Rng rng(5);
  const auto spec = build_workflow(WorkflowKind::kVoting);
  const auto store = perturbed_store(params, spec, RoutingMode::kIsolated, 0.5, rng);
  Rng ep(6);
  const auto traj = run_episode(spec, store, {RoutingMode::kIsolated, {}}, task35(), {}, 0.7, ep,
                                {.identical_generators = true});
  CHECK(traj.turns[1].tokens == traj.turns[0].tokens);
  CHECK(traj.turns[2].rollout_log_probs == traj.turns[0].rollout_log_probs);
  CHECK(traj.turns[2].slot == 2);
}

TEST_CASE("extract_final_answer") {
  const auto voting = build_workflow(WorkflowKind::kVoting);
  Trajectory t;
  t.turns = {text_turn(Role::kGenerator, 0, boxed_tokens(4)),
             text_turn(Role::kGenerator, 1, boxed_tokens(8)),
             text_turn(Role::kGenerator, 2, {tok::kSo}),
             text_turn(Role::kAggregator, 0, {tok::kBoxOpen, digit_token(2), tok::kBoxClose})};
  CHECK(extract_final_answer(t, voting) == "8");
  t.turns[3].tokens = {tok::kBoxOpen, digit_token(3), tok::kBoxClose};
  CHECK_FALSE(extract_final_answer(t, voting).has_value());
  t.turns[3].tokens = {tok::kBoxOpen, digit_token(7), tok::kBoxClose};
  CHECK(extract_final_answer(t, voting) == "7");
  t.turns[3].tokens = {tok::kBoxOpen, digit_token(0), tok::kBoxClose};
  CHECK(extract_final_answer(t, voting) == "0");
  t.turns[3].tokens = {tok::kSo};
  CHECK_FALSE(extract_final_answer(t, voting).has_value());

  Trajectory ow;
  ow.turns = {text_turn(Role::kOrchestrator, 0, boxed_tokens(1)),
              text_turn(Role::kWorker, 0, boxed_tokens(2)),
              text_turn(Role::kWorker, 1, boxed_tokens(2)),
              text_turn(Role::kWorker, 2, boxed_tokens(2)),
              text_turn(Role::kSynthesizer, 0, {tok::kSo, tok::kThe})};
  CHECK_FALSE(extract_final_answer(ow, build_workflow(WorkflowKind::kOrchWorkers)).has_value());

  Trajectory sa;
  sa.turns = {text_turn(Role::kGenerator, 0, {tok::kBoxOpen, digit_token(7), tok::kBoxClose})};
  CHECK(extract_final_answer(sa, build_workflow(WorkflowKind::kSingleAgent)) == "7");

  Trajectory eo;
  eo.turns = {text_turn(Role::kGenerator, 0, boxed_tokens(1)),
              text_turn(Role::kEvaluator, 0, {tok::kBoxOpen, tok::kIncorrect, tok::kBoxClose}),
              text_turn(Role::kGenerator, 0, boxed_tokens(5))};
  CHECK(extract_final_answer(eo, build_workflow(WorkflowKind::kEvalOpt)) == "5");
}
