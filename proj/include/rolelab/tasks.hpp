#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rolelab/common.hpp"
#include "rolelab/vocab.hpp"

namespace rolelab {

enum class TaskKind { kMath, kCode };

std::string_view task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct CodeTest {
  long input = 0;
  long expected = 0;
  bool operator==(const CodeTest&) const = default;
};

// MathToy: "a + b (+ ...)" with truth = sum mod modulus.
// CodeToy: two example points of a hidden affine map plus the hidden test
// count; truth is the test suite.
struct TaskInstance {
  TaskKind kind = TaskKind::kMath;
  std::string id;
  std::vector<Token> prompt;
  long truth = 0;
  std::vector<CodeTest> tests;
  int modulus = 10;

  bool operator==(const TaskInstance&) const = default;
};

// difficulty: MathToy uses difficulty+1 operands; CodeToy uses difficulty+2
// hidden tests.
TaskInstance sample_task(TaskKind kind, int difficulty, Rng& rng, int modulus = 10);
TaskInstance make_math_task(std::span<const long> operands, int modulus = 10);
TaskInstance make_code_task(long slope, long intercept, int num_tests);

// Recomputes the ground truth from the prompt alone.
long math_truth_from_prompt(std::span<const Token> prompt, int modulus);
std::vector<CodeTest> code_tests_from_prompt(std::span<const Token> prompt);

// Every MathToy instance with two operands below `modulus`.
std::vector<TaskInstance> enumerate_math_tasks(int modulus = 10);

std::optional<std::string> parse_boxed(std::string_view text);

// Body of the last closed ``` fence: lines strictly between the delimiters.
std::optional<std::string> last_fenced_block(std::string_view text);

enum class RewardClass { kCorrect, kParsedWrong, kMalformed, kPartialPass };
std::string_view reward_class_name(RewardClass c);

struct RewardOutcome {
  double value = 0.0;
  RewardClass cls = RewardClass::kMalformed;
};

inline constexpr double kFormatPenalty = 0.1;
inline constexpr int kInterpreterStepBudget = 64;

RewardOutcome math_reward(std::string_view answer_text, long truth,
                          double format_penalty = kFormatPenalty);

// Scores the last fenced block as an affine integer expression in x.
RewardOutcome code_reward(std::string_view program_text, std::span<const CodeTest> tests,
                          int step_budget = kInterpreterStepBudget);

// Affine map a*x + b; absent for anything outside the toy language or over
// the step budget.
struct AffineProgram {
  long slope = 0;
  long intercept = 0;
};
std::optional<AffineProgram> interpret_affine(std::string_view source,
                                              int step_budget = kInterpreterStepBudget);

// Reward for an already-extracted final answer (boxed content for math,
// program body for code). Absence is malformed.
RewardOutcome score_answer(const TaskInstance& task, const std::optional<std::string>& answer,
                           double format_penalty = kFormatPenalty);

enum class Verdict { kCorrect, kIncorrect, kUnknown };
std::string_view verdict_name(Verdict v);
Verdict parse_verdict(std::string_view text);

}  // namespace rolelab
