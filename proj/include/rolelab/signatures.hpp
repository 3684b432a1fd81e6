#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rolelab {

// Log-side mirror of a Turn. Role names are free-form strings so logs from
// other systems load as long as they follow the JSONL schema.
struct TurnRecord {
  std::string role;
  int slot = 0;
  std::string text;
  int token_count = 0;
  std::string finish_reason = "stop";
};

struct EpisodeRecord {
  int step = 0;
  std::string problem_id;
  std::vector<TurnRecord> turns;
};

inline constexpr std::array<std::string_view, 8> kHedgePhrases = {
    "wait",        "alternatively",     "actually",    "hmm",
    "let me reconsider", "on second thought", "not correct", "this is wrong"};

bool contains_hedge(std::string_view text);
double hedging_rate(std::span<const std::string> texts);

std::vector<std::string> whitespace_words(std::string_view text);

// Word-level n-gram Jaccard. Both sets empty -> 1, exactly one empty -> 0.
double ngram_jaccard(std::string_view a, std::string_view b, int n);

// Mean over problems of the mean pairwise Jaccard between slot texts. Throws
// Error when a problem has fewer than two slots.
double inter_slot_jaccard(const std::vector<std::vector<std::string>>& per_problem_slots, int n);

double truncation_rate(std::span<const TurnRecord> turns);
double boxed_retention(std::span<const std::string> texts);

// Turns with token_count <= 30 and a parseable boxed span.
inline constexpr int kTerseTokenLimit = 30;
double terse_rate(std::span<const TurnRecord> turns);

enum class EvaluatorForm { kPythonCodeFence, kBareStamp, kOther };
std::string_view evaluator_form_name(EvaluatorForm f);

inline constexpr int kBareStampTokenLimit = 200;
EvaluatorForm classify_evaluator_form(std::string_view text, int token_count);
// Counts whitespace-separated words as tokens.
EvaluatorForm classify_evaluator_form(std::string_view text);

// Nearest-rank percentiles of token_count. Throws Error on empty input.
std::vector<double> length_percentiles(std::span<const TurnRecord> turns,
                                       std::span<const double> ps);

// Lowercased, whitespace-collapsed first line, cut to 12 words.
std::string strategy_label(std::string_view text);
int strategy_diversity(std::span<const std::string> texts);

struct LengthStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};

struct VerdictStats {
  double correct = 0.0;
  double incorrect = 0.0;
  double unknown = 0.0;
  double retention = 0.0;  // correct + incorrect
};

struct FormStats {
  double python_code_fence = 0.0;
  double bare_stamp = 0.0;
  double other = 0.0;
};

struct RoleSignature {
  std::string role;
  std::size_t turns = 0;
  LengthStats length;
  LengthStats slot_avg_length;  // per-slot stats averaged over slots
  double truncation_rate = 0.0;
  double boxed_retention = 0.0;
  double hedging_rate = 0.0;
  double terse_rate = 0.0;
  VerdictStats verdicts;
  std::optional<double> inter_slot_jaccard;  // roles with >= 2 slots
  int strategy_diversity = 0;
  // First occurrence of each (episode, slot); later ones are revisions.
  std::size_t iter1_turns = 0;
  LengthStats iter1_length;
  double iter1_truncation_rate = 0.0;
  double iter1_boxed_retention = 0.0;
  FormStats iter1_forms;
};

struct StepSignature {
  int step = 0;
  std::size_t episodes = 0;
  std::map<std::string, RoleSignature> roles;
  // p50 length of second-round generator turns in episodes whose first
  // evaluator turn is a python code fence.
  std::optional<double> iter2_generator_p50_python_bucket;
};

struct SignatureReport {
  std::vector<StepSignature> steps;
};

inline constexpr int kJaccardN = 3;

EpisodeRecord episode_from_json(const nlohmann::json& j, std::size_t line);

// A .jsonl file or a directory of them (sorted by name). Throws SchemaError
// with the offending line number.
std::vector<EpisodeRecord> read_episode_log(const std::filesystem::path& path);

SignatureReport summarize(std::span<const EpisodeRecord> episodes);
SignatureReport build_report(const std::filesystem::path& log_path);

nlohmann::json to_json(const StepSignature& s);
nlohmann::json to_json(const SignatureReport& r);

struct SignatureRow {
  std::string role;
  std::string metric;  // dotted path for nested fields
  double value = 0.0;
};

// Numeric leaves of to_json(s) as (role, metric, value) rows.
std::vector<SignatureRow> signature_rows(const StepSignature& s);

// out_dir/step_k/report.json and report.csv (step,role,metric,value).
void write_report(const SignatureReport& report, const std::filesystem::path& out_dir);

}  // namespace rolelab
