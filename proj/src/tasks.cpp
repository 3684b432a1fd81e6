#include "rolelab/tasks.hpp"

#include <algorithm>
#include <cctype>

namespace rolelab {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<long> parse_integer(std::string_view s) {
  s = trim(s);
  if (s.empty() || s.size() > 15) return std::nullopt;
  bool neg = false;
  if (s.front() == '-') {
    neg = true;
    s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
  }
  long v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return neg ? -v : v;
}

void append(std::vector<Token>& out, const std::vector<Token>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

// Reads a digit run starting at i; advances i past it.
std::optional<long> read_number(std::span<const Token> p, std::size_t& i) {
  const std::size_t start = i;
  while (i < p.size() && is_digit(p[i])) ++i;
  return tokens_to_integer(p.subspan(start, i - start));
}

}  // namespace

std::string_view task_kind_name(TaskKind kind) {
  return kind == TaskKind::kMath ? "math" : "code";
}

TaskKind parse_task_kind(std::string_view name) {
  const std::string n = lower(name);
  if (n == "math" || n == "mathtoy") return TaskKind::kMath;
  if (n == "code" || n == "codetoy") return TaskKind::kCode;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

TaskInstance make_math_task(std::span<const long> operands, int modulus) {
  if (operands.size() < 2) throw ConfigError("math task needs at least two operands");
  if (modulus < 2) throw ConfigError("modulus must be at least 2");
  TaskInstance t;
  t.kind = TaskKind::kMath;
  t.modulus = modulus;
  t.id = "math";
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (operands[i] < 0 || operands[i] >= modulus) throw ConfigError("operand out of range");
    if (i > 0) t.prompt.push_back(tok::kPlus);
    append(t.prompt, encode_integer(operands[i]));
    t.id += "-" + std::to_string(operands[i]);
  }
  t.truth = math_truth_from_prompt(t.prompt, modulus);
  return t;
}

TaskInstance make_code_task(long slope, long intercept, int num_tests) {
  if (num_tests < 2) throw ConfigError("code task needs at least two tests");
  if (slope < 0 || intercept < 0) throw ConfigError("code task coefficients must be non-negative");
  TaskInstance t;
  t.kind = TaskKind::kCode;
  t.modulus = 0;
  t.id = "code-" + std::to_string(slope) + "-" + std::to_string(intercept) + "-" +
         std::to_string(num_tests);
  for (long x : {0L, 1L}) {
    t.prompt.push_back(tok::kX);
    append(t.prompt, encode_integer(x));
    t.prompt.push_back(tok::kIs);
    append(t.prompt, encode_integer(slope * x + intercept));
  }
  t.prompt.push_back(tok::kCheck);
  append(t.prompt, encode_integer(num_tests));
  t.tests = code_tests_from_prompt(t.prompt);
  return t;
}

TaskInstance sample_task(TaskKind kind, int difficulty, Rng& rng, int modulus) {
  if (difficulty < 1 || difficulty > 8) throw ConfigError("difficulty must be in [1, 8]");
  if (kind == TaskKind::kMath) {
    std::vector<long> ops(static_cast<std::size_t>(difficulty) + 1);
    for (long& o : ops) o = static_cast<long>(rng.below(static_cast<std::uint64_t>(modulus)));
    return make_math_task(ops, modulus);
  }
  const long slope = static_cast<long>(rng.below(4));
  const long intercept = static_cast<long>(rng.below(10));
  return make_code_task(slope, intercept, difficulty + 2);
}

long math_truth_from_prompt(std::span<const Token> prompt, int modulus) {
  long sum = 0;
  std::size_t i = 0;
  while (i < prompt.size()) {
    if (prompt[i] == tok::kPlus) {
      ++i;
      continue;
    }
    auto v = read_number(prompt, i);
    if (!v) throw Error("malformed math prompt");
    sum += *v;
  }
  return sum % modulus;
}

std::vector<CodeTest> code_tests_from_prompt(std::span<const Token> prompt) {
  std::vector<std::pair<long, long>> points;
  long count = 0;
  std::size_t i = 0;
  while (i < prompt.size()) {
    if (prompt[i] == tok::kX) {
      ++i;
      auto x = read_number(prompt, i);
      if (!x || i >= prompt.size() || prompt[i] != tok::kIs) throw Error("malformed code prompt");
      ++i;
      auto y = read_number(prompt, i);
      if (!y) throw Error("malformed code prompt");
      points.emplace_back(*x, *y);
    } else if (prompt[i] == tok::kCheck) {
      ++i;
      auto n = read_number(prompt, i);
      if (!n) throw Error("malformed code prompt");
      count = *n;
    } else {
      throw Error("malformed code prompt");
    }
  }
  if (points.size() != 2 || points[0].first != 0 || points[1].first != 1 || count < 2) {
    throw Error("malformed code prompt");
  }
  const long intercept = points[0].second;
  const long slope = points[1].second - intercept;
  std::vector<CodeTest> tests;
  for (long x = 0; x < count; ++x) tests.push_back({x, slope * x + intercept});
  return tests;
}

std::vector<TaskInstance> enumerate_math_tasks(int modulus) {
  std::vector<TaskInstance> out;
  for (long a = 0; a < modulus; ++a) {
    for (long b = 0; b < modulus; ++b) {
      const long ops[] = {a, b};
      out.push_back(make_math_task(ops, modulus));
    }
  }
  return out;
}

std::optional<std::string> parse_boxed(std::string_view text) {
  static constexpr std::string_view kOpen = "\\boxed{";
  std::optional<std::string> last;
  std::size_t pos = text.find(kOpen);
  while (pos != std::string_view::npos) {
    const std::size_t start = pos + kOpen.size();
    int depth = 1;
    std::size_t j = start;
    for (; j < text.size(); ++j) {
      if (text[j] == '{') ++depth;
      if (text[j] == '}' && --depth == 0) break;
    }
    if (j < text.size()) {
      last = std::string(trim(text.substr(start, j - start)));
      pos = text.find(kOpen, j + 1);
    } else {
      pos = text.find(kOpen, start);
    }
  }
  return last;
}

std::optional<std::string> last_fenced_block(std::string_view text) {
  std::optional<std::string> last;
  bool inside = false;
  std::string body;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    if (line.starts_with("```")) {
      if (inside) last = body;
      inside = !inside;
      body.clear();
    } else if (inside) {
      if (!body.empty()) body += '\n';
      body += line;
    }
    pos = end + 1;
  }
  return last;
}

std::string_view reward_class_name(RewardClass c) {
  switch (c) {
    case RewardClass::kCorrect: return "correct";
    case RewardClass::kParsedWrong: return "parsed_wrong";
    case RewardClass::kMalformed: return "malformed";
    case RewardClass::kPartialPass: return "partial_pass";
  }
  return "malformed";
}

RewardOutcome math_reward(std::string_view answer_text, long truth, double format_penalty) {
  const auto boxed = parse_boxed(answer_text);
  const auto value = boxed ? parse_integer(*boxed) : std::nullopt;
  if (!value) return {-format_penalty, RewardClass::kMalformed};
  if (*value == truth) return {1.0, RewardClass::kCorrect};
  return {0.0, RewardClass::kParsedWrong};
}

std::optional<AffineProgram> interpret_affine(std::string_view source, int step_budget) {
  enum class Kind { kInt, kX, kPlus, kTimes };
  struct Lex {
    Kind kind;
    long value;
  };
  std::vector<Lex> lex;
  for (std::size_t i = 0; i < source.size();) {
    const char c = source[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      long v = 0;
      std::size_t n = 0;
      while (i < source.size() && std::isdigit(static_cast<unsigned char>(source[i]))) {
        if (++n > 9) return std::nullopt;
        v = v * 10 + (source[i++] - '0');
      }
      lex.push_back({Kind::kInt, v});
    } else if (c == 'x') {
      lex.push_back({Kind::kX, 0});
      ++i;
    } else if (c == '+') {
      lex.push_back({Kind::kPlus, 0});
      ++i;
    } else if (c == '*') {
      lex.push_back({Kind::kTimes, 0});
      ++i;
    } else {
      return std::nullopt;
    }
    if (static_cast<int>(lex.size()) > step_budget) return std::nullopt;
  }
  if (lex.empty()) return std::nullopt;

  // expr := term ('+' term)* ; term := factor ('*' factor)* ; factor := INT | x
  AffineProgram total;
  std::size_t i = 0;
  constexpr long kLimit = 1'000'000'000L;
  while (true) {
    long slope = 0;
    long coeff = 1;
    bool has_x = false;
    while (true) {
      if (i >= lex.size()) return std::nullopt;
      if (lex[i].kind == Kind::kInt) {
        coeff *= lex[i].value;
        if (coeff > kLimit) return std::nullopt;
      } else if (lex[i].kind == Kind::kX) {
        if (has_x) return std::nullopt;  // not affine
        has_x = true;
      } else {
        return std::nullopt;
      }
      ++i;
      if (i < lex.size() && lex[i].kind == Kind::kTimes) {
        ++i;
        continue;
      }
      break;
    }
    if (has_x) slope = coeff;
    total.slope += slope;
    total.intercept += has_x ? 0 : coeff;
    if (total.slope > kLimit || total.intercept > kLimit) return std::nullopt;
    if (i == lex.size()) break;
    if (lex[i].kind != Kind::kPlus) return std::nullopt;
    ++i;
  }
  return total;
}

RewardOutcome code_reward(std::string_view program_text, std::span<const CodeTest> tests,
                          int step_budget) {
  const auto block = last_fenced_block(program_text);
  if (!block) return {0.0, RewardClass::kMalformed};
  const auto program = interpret_affine(*block, step_budget);
  if (!program || tests.empty()) return {0.0, RewardClass::kMalformed};
  std::size_t passed = 0;
  for (const auto& t : tests) {
    if (program->slope * t.input + program->intercept == t.expected) ++passed;
  }
  if (passed == tests.size()) return {1.0, RewardClass::kCorrect};
  if (passed == 0) return {0.0, RewardClass::kParsedWrong};
  return {static_cast<double>(passed) / static_cast<double>(tests.size()),
          RewardClass::kPartialPass};
}

RewardOutcome score_answer(const TaskInstance& task, const std::optional<std::string>& answer,
                           double format_penalty) {
  if (task.kind == TaskKind::kMath) {
    if (!answer) return {-format_penalty, RewardClass::kMalformed};
    return math_reward("\\boxed{" + *answer + "}", task.truth, format_penalty);
  }
  if (!answer) return {0.0, RewardClass::kMalformed};
  return code_reward("```\n" + *answer + "\n```", task.tests);
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kCorrect: return "correct";
    case Verdict::kIncorrect: return "incorrect";
    case Verdict::kUnknown: return "unknown";
  }
  return "unknown";
}

Verdict parse_verdict(std::string_view text) {
  const auto boxed = parse_boxed(text);
  if (!boxed) return Verdict::kUnknown;
  const std::string v = lower(*boxed);
  if (v == "correct") return Verdict::kCorrect;
  if (v == "incorrect") return Verdict::kIncorrect;
  return Verdict::kUnknown;
}

}  // namespace rolelab
