#include "rolelab/vocab.hpp"

#include <array>

#include "rolelab/common.hpp"

namespace rolelab {

namespace {

constexpr std::array<std::string_view, kVocabSize> kTokenText = {
    "",        "",      "\\boxed{", "}",      "```",           "\n",
    "Correct", "Incorrect",
    "0",       "1",     "2",        "3",      "4",             "5",
    "6",       "7",     "8",        "9",
    "x",       "+",     "*",        "|",      "wait",          "hmm",
    "actually", "alternatively",    "so",     "the",           "answer",
    "is",      "check", "plan",
};

constexpr std::array<std::string_view, kNumRoles> kRoleNames = {
    "generator", "evaluator", "aggregator", "orchestrator", "worker", "synthesizer"};

bool ends_with_newline(const std::string& s) { return !s.empty() && s.back() == '\n'; }

}  // namespace

std::string_view role_name(Role role) { return kRoleNames.at(static_cast<std::size_t>(role)); }

Role parse_role(std::string_view name) {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
    if (kRoleNames[i] == name) return static_cast<Role>(i);
  }
  throw ConfigError("unknown role '" + std::string(name) + "'");
}

std::vector<Token> encode_integer(long value) {
  if (value < 0) throw Error("encode_integer: negative value");
  std::vector<Token> out;
  do {
    out.insert(out.begin(), digit_token(static_cast<int>(value % 10)));
    value /= 10;
  } while (value > 0);
  return out;
}

std::string_view token_text(Token t) {
  if (t < 0 || t >= kVocabSize) return "<unk>";
  return kTokenText[static_cast<std::size_t>(t)];
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  Token prev = tok::kBos;
  bool have_prev = false;
  for (Token t : tokens) {
    if (t == tok::kBos || t == tok::kEos) continue;
    if (t == tok::kNewline) {
      out += '\n';
    } else if (t == tok::kFence) {
      if (!out.empty() && !ends_with_newline(out)) out += '\n';
      out += "```\n";
    } else {
      const bool glue = !have_prev || ends_with_newline(out) || prev == tok::kBoxOpen ||
                        t == tok::kBoxClose || (is_digit(prev) && is_digit(t));
      if (!glue) out += ' ';
      out += token_text(t);
    }
    prev = t;
    have_prev = true;
  }
  return out;
}

std::optional<std::vector<Token>> boxed_content_tokens(std::span<const Token> tokens) {
  std::optional<std::vector<Token>> last;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != tok::kBoxOpen) continue;
    for (std::size_t j = i + 1; j < tokens.size(); ++j) {
      if (tokens[j] == tok::kBoxOpen) break;
      if (tokens[j] == tok::kBoxClose) {
        last = std::vector<Token>(tokens.begin() + static_cast<std::ptrdiff_t>(i + 1),
                                  tokens.begin() + static_cast<std::ptrdiff_t>(j));
        i = j;
        break;
      }
    }
  }
  return last;
}

std::optional<long> tokens_to_integer(std::span<const Token> tokens) {
  if (tokens.empty() || tokens.size() > 15) return std::nullopt;
  long v = 0;
  for (Token t : tokens) {
    if (!is_digit(t)) return std::nullopt;
    v = v * 10 + digit_value(t);
  }
  return v;
}

}  // namespace rolelab
