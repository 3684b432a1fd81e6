#pragma once

// Hand-built trajectory logs for the signature analyzers. Every expected
// value below was worked out by hand from the records.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rolelab/signatures.hpp"
#include "rolelab/trajectory_io.hpp"

namespace rolelab::testing {

using nlohmann::json;

inline json fixture_turn(const std::string& role, int slot, const std::string& text, int tokens,
                         bool truncated = false) {
  return {{"role", role},
          {"slot", slot},
          {"text", text},
          {"token_count", tokens},
          {"finish_reason", truncated ? "length" : "stop"}};
}

inline json fixture_episode(int step, const std::string& id, std::vector<json> turns) {
  return {{"step", step}, {"problem_id", id}, {"turns", turns}};
}

// Voting: 4 problems x (3 voters + 1 aggregator).
inline std::vector<json> voting_fixture() {
  auto g = [](int slot, const std::string& text, int tokens, bool trunc = false) {
    return fixture_turn("generator", slot, text, tokens, trunc);
  };
  auto agg = [](const std::string& text, int tokens) {
    return fixture_turn("aggregator", 0, text, tokens);
  };
  return {
      fixture_episode(70, "p0",
                      {g(0, "a b c d", 10), g(1, "b c d e", 50, true), g(2, "a b c d", 5),
                       agg("\\boxed{2}", 6)}),
      fixture_episode(70, "p1",
                      {g(0, "p q \\boxed{7}", 20), g(1, "p q \\boxed{7}", 60),
                       g(2, "p q \\boxed{7}", 15, true), agg("\\boxed{1}", 6)}),
      fixture_episode(70, "p2",
                      {g(0, "wait \\boxed{3}", 30), g(1, "hmm \\boxed{3}", 70),
                       g(2, "one two three", 25), agg("the candidates disagree", 25)}),
      fixture_episode(70, "p3",
                      {g(0, "Let me reconsider \\boxed{4}", 40),
                       g(1, "on second thought \\boxed{4}", 80),
                       g(2, "ALTERNATIVELY x \\boxed{5}", 100, true),
                       agg("long justification of the choice \\boxed{2}", 200)}),
  };
}

inline const std::string kPyEvalFour =
    "```\ndef f(x):\n    y = x\n    return y\nprint(f(1))\n```\n\\boxed{Incorrect}";
inline const std::string kPyEvalThree = "Let me solve it.\n```\na = 1\n\nb = 2\nprint(a + b)\n```";

// Eval-Opt: 4 problems with revision rounds in the first two.
inline std::vector<json> eval_opt_fixture() {
  auto g = [](const std::string& text, int tokens, bool trunc = false) {
    return fixture_turn("generator", 0, text, tokens, trunc);
  };
  auto e = [](const std::string& text, int tokens, bool trunc = false) {
    return fixture_turn("evaluator", 0, text, tokens, trunc);
  };
  return {
      fixture_episode(200, "e0",
                      {g("so \\boxed{5}", 100), e(kPyEvalFour, 60), g("retry \\boxed{6}", 300),
                       e("\\boxed{Correct}", 4)}),
      fixture_episode(200, "e1",
                      {g("so the answer", 200, true), e(kPyEvalThree, 40), g("again", 500),
                       e("\\boxed{correct}", 4)}),
      fixture_episode(200, "e2", {g("\\boxed{4}", 50), e("Checked. \\boxed{Correct}", 3)}),
      fixture_episode(200, "e3", {g("\\boxed{4}", 80), e("an essay with no verdict", 500, true)}),
  };
}

// Orch-Workers: 3 problems.
inline std::vector<json> orch_fixture() {
  auto o = [](const std::string& text) { return fixture_turn("orchestrator", 0, text, 12); };
  auto w = [](int slot, const std::string& text, int tokens, bool trunc = false) {
    return fixture_turn("worker", slot, text, tokens, trunc);
  };
  auto s = [](int tokens) { return fixture_turn("synthesizer", 0, "\\boxed{1}", tokens); };
  return {
      fixture_episode(140, "o0",
                      {o("Plan: split the sum\nthen add"), w(0, "a b c d", 10),
                       w(1, "a b c d", 10), w(2, "a b c d", 10), s(95)}),
      fixture_episode(140, "o1",
                      {o("plan:   split the SUM\nsomething else"), w(0, "a b c d", 20),
                       w(1, "b c d e", 30, true), w(2, "x y z w", 40), s(425)}),
      fixture_episode(140, "o2",
                      {o("Try digits first"), w(0, "m n o", 50), w(1, "m n o p", 60),
                       w(2, "q r s", 70), s(147)}),
  };
}

struct FixtureCheck {
  std::string table;  // which column family the value belongs to
  std::string name;
  double got = 0.0;
  double want = 0.0;
  bool ok() const { return std::abs(got - want) <= 1e-12; }
};

// Writes the three logs under `dir`, runs build_report on each and returns
// every column compared with its hand-computed value.
inline std::vector<FixtureCheck> signature_fixture_checks(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "voting.jsonl", voting_fixture());
  write_jsonl(dir / "eval_opt.jsonl", eval_opt_fixture());
  write_jsonl(dir / "orch.jsonl", orch_fixture());

  std::vector<FixtureCheck> out;
  auto add = [&](const std::string& table, const std::string& name, double got, double want) {
    out.push_back({table, name, got, want});
  };

  {
    const auto rep = build_report(dir / "voting.jsonl");
    const auto& st = rep.steps.at(0);
    const auto& gen = st.roles.at("generator");
    const auto& agg = st.roles.at("aggregator");
    add("voting", "step", st.step, 70);
    add("voting", "voter mean toks", gen.length.mean, 505.0 / 12.0);
    add("voting", "voter trunc", gen.truncation_rate, 0.25);
    add("voting", "voter boxed retention", gen.boxed_retention, 8.0 / 12.0);
    add("voting", "voter hedge", gen.hedging_rate, 5.0 / 12.0);
    add("voting", "inter-voter 3-gram J", gen.inter_slot_jaccard.value_or(-1), 17.0 / 36.0);
    add("voting", "voter slot-avg p50", gen.slot_avg_length.p50, 95.0 / 3.0);
    add("voting", "voter slot-avg p95", gen.slot_avg_length.p95, 220.0 / 3.0);
    add("voting", "aggregator p50", agg.length.p50, 6);
    add("voting", "aggregator p95", agg.length.p95, 200);
    add("voting", "aggregator terse rate", agg.terse_rate, 0.5);
  }
  {
    const auto rep = build_report(dir / "eval_opt.jsonl");
    const auto& st = rep.steps.at(0);
    const auto& ev = st.roles.at("evaluator");
    const auto& gen = st.roles.at("generator");
    add("eval_opt", "step", st.step, 200);
    add("eval_opt", "evaluator iter-1 python_code_fence", ev.iter1_forms.python_code_fence, 0.5);
    add("eval_opt", "evaluator iter-1 bare_stamp", ev.iter1_forms.bare_stamp, 0.25);
    add("eval_opt", "evaluator iter-1 other", ev.iter1_forms.other, 0.25);
    add("eval_opt", "evaluator forms sum",
        ev.iter1_forms.python_code_fence + ev.iter1_forms.bare_stamp + ev.iter1_forms.other, 1.0);
    add("eval_opt", "verdict correct", ev.verdicts.correct, 0.5);
    add("eval_opt", "verdict incorrect", ev.verdicts.incorrect, 1.0 / 6.0);
    add("eval_opt", "verdict unknown", ev.verdicts.unknown, 2.0 / 6.0);
    add("eval_opt", "verdict-tag retention", ev.verdicts.retention, 4.0 / 6.0);
    add("eval_opt", "iter-1 generator trunc", gen.iter1_truncation_rate, 0.25);
    add("eval_opt", "iter-2 generator p50 (python bucket)",
        st.iter2_generator_p50_python_bucket.value_or(-1), 300);
    add("eval_opt", "evaluator median toks", ev.length.p50, 4);
    add("eval_opt", "evaluator p95 toks", ev.length.p95, 500);
    add("eval_opt", "evaluator trunc", ev.truncation_rate, 1.0 / 6.0);
    add("eval_opt", "iter-1 generator median toks", gen.iter1_length.p50, 80);
    add("eval_opt", "iter-1 generator boxed retention", gen.iter1_boxed_retention, 0.75);
  }
  {
    const auto rep = build_report(dir / "orch.jsonl");
    const auto& st = rep.steps.at(0);
    const auto& w = st.roles.at("worker");
    const auto& o = st.roles.at("orchestrator");
    const auto& s = st.roles.at("synthesizer");
    add("orch_workers", "step", st.step, 140);
    add("orch_workers", "worker mean toks", w.length.mean, 300.0 / 9.0);
    add("orch_workers", "worker trunc", w.truncation_rate, 1.0 / 9.0);
    add("orch_workers", "worker boxed retention", w.boxed_retention, 0.0);
    add("orch_workers", "worker hedge", w.hedging_rate, 0.0);
    add("orch_workers", "inter-worker 3-gram J", w.inter_slot_jaccard.value_or(-1), 23.0 / 54.0);
    add("orch_workers", "unique first-strategy labels", o.strategy_diversity, 2);
    add("orch_workers", "synthesizer p50", s.length.p50, 147);
    add("orch_workers", "synthesizer p95", s.length.p95, 425);
  }
  return out;
}

}  // namespace rolelab::testing
