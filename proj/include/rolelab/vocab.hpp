#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rolelab {

using Token = std::int32_t;

// Fixed 32-token vocabulary shared by every role. BOX_OPEN/BOX_CLOSE
// detokenize to "\boxed{" and "}" so text analyzers and token-level policies
// see the same answers.
namespace tok {
inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kBoxOpen = 2;
inline constexpr Token kBoxClose = 3;
inline constexpr Token kFence = 4;
inline constexpr Token kNewline = 5;
inline constexpr Token kCorrect = 6;
inline constexpr Token kIncorrect = 7;
inline constexpr Token kDigit0 = 8;  // digits occupy 8..17
inline constexpr Token kX = 18;
inline constexpr Token kPlus = 19;
inline constexpr Token kTimes = 20;
inline constexpr Token kSep = 21;
inline constexpr Token kWait = 22;
inline constexpr Token kHmm = 23;
inline constexpr Token kActually = 24;
inline constexpr Token kAlternatively = 25;
inline constexpr Token kSo = 26;
inline constexpr Token kThe = 27;
inline constexpr Token kAnswer = 28;
inline constexpr Token kIs = 29;
inline constexpr Token kCheck = 30;
inline constexpr Token kPlan = 31;
}  // namespace tok

inline constexpr int kVocabSize = 32;

constexpr bool is_digit(Token t) { return t >= tok::kDigit0 && t < tok::kDigit0 + 10; }
constexpr Token digit_token(int d) { return tok::kDigit0 + d; }
constexpr int digit_value(Token t) { return t - tok::kDigit0; }

// Decimal digits of a non-negative integer as tokens.
std::vector<Token> encode_integer(long value);

std::string_view token_text(Token t);

std::string detokenize(std::span<const Token> tokens);

// Tokens strictly between the last BOX_OPEN and its following BOX_CLOSE.
std::optional<std::vector<Token>> boxed_content_tokens(std::span<const Token> tokens);

// Parses a run of digit tokens as an integer; absent for anything else.
std::optional<long> tokens_to_integer(std::span<const Token> tokens);

}  // namespace rolelab
