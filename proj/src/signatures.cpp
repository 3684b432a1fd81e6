#include "rolelab/signatures.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rolelab/common.hpp"
#include "rolelab/tasks.hpp"

namespace rolelab {

using nlohmann::json;

namespace {

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      break;
    }
    out.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

struct FenceScan {
  bool any_fence = false;
  int max_body_lines = 0;  // over closed blocks
};

FenceScan scan_fences(std::string_view text) {
  FenceScan scan;
  bool open = false;
  int body = 0;
  for (const auto& line : lines_of(text)) {
    if (line.starts_with("```")) {
      scan.any_fence = true;
      if (open) scan.max_body_lines = std::max(scan.max_body_lines, body);
      open = !open;
      body = 0;
    } else if (open && !is_blank(line)) {
      ++body;
    }
  }
  return scan;
}

std::set<std::string> ngrams(std::string_view text, int n) {
  const auto words = whitespace_words(text);
  std::set<std::string> out;
  if (static_cast<int>(words.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
    std::string g = words[i];
    for (int k = 1; k < n; ++k) {
      g += '\x1f';
      g += words[i + static_cast<std::size_t>(k)];
    }
    out.insert(std::move(g));
  }
  return out;
}

double fraction(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

LengthStats length_stats(std::span<const TurnRecord> turns) {
  LengthStats s;
  if (turns.empty()) return s;
  double sum = 0.0;
  for (const auto& t : turns) sum += t.token_count;
  s.mean = sum / static_cast<double>(turns.size());
  const double ps[] = {50.0, 95.0};
  const auto q = length_percentiles(turns, ps);
  s.p50 = q[0];
  s.p95 = q[1];
  return s;
}

std::vector<std::string> texts_of(std::span<const TurnRecord> turns) {
  std::vector<std::string> out;
  for (const auto& t : turns) out.push_back(t.text);
  return out;
}

void flatten_json(const json& j, const std::string& prefix, std::vector<std::pair<std::string, double>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_number()) {
    out.emplace_back(prefix, j.get<double>());
  }
}

json length_json(const LengthStats& s) { return {{"mean", s.mean}, {"p50", s.p50}, {"p95", s.p95}}; }

}  // namespace

bool contains_hedge(std::string_view text) {
  const std::string lower = to_lower(text);
  return std::any_of(kHedgePhrases.begin(), kHedgePhrases.end(),
                     [&](std::string_view p) { return lower.find(p) != std::string::npos; });
}

double hedging_rate(std::span<const std::string> texts) {
  std::size_t hits = 0;
  for (const auto& t : texts) hits += contains_hedge(t) ? 1 : 0;
  return fraction(hits, texts.size());
}

std::vector<std::string> whitespace_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double ngram_jaccard(std::string_view a, std::string_view b, int n) {
  if (n < 1) throw ConfigError("n-gram order must be >= 1");
  const auto ga = ngrams(a, n);
  const auto gb = ngrams(b, n);
  if (ga.empty() && gb.empty()) return 1.0;
  if (ga.empty() || gb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& g : ga) inter += gb.contains(g) ? 1 : 0;
  return static_cast<double>(inter) / static_cast<double>(ga.size() + gb.size() - inter);
}

double inter_slot_jaccard(const std::vector<std::vector<std::string>>& per_problem_slots, int n) {
  if (per_problem_slots.empty()) throw Error("inter_slot_jaccard: no problems");
  double total = 0.0;
  for (const auto& slots : per_problem_slots) {
    if (slots.size() < 2) throw Error("inter_slot_jaccard: a problem has fewer than 2 slots");
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      for (std::size_t j = i + 1; j < slots.size(); ++j) {
        sum += ngram_jaccard(slots[i], slots[j], n);
        ++pairs;
      }
    }
    total += sum / pairs;
  }
  return total / static_cast<double>(per_problem_slots.size());
}

double truncation_rate(std::span<const TurnRecord> turns) {
  std::size_t hits = 0;
  for (const auto& t : turns) hits += t.finish_reason == "length" ? 1 : 0;
  return fraction(hits, turns.size());
}

double boxed_retention(std::span<const std::string> texts) {
  std::size_t hits = 0;
  for (const auto& t : texts) hits += parse_boxed(t).has_value() ? 1 : 0;
  return fraction(hits, texts.size());
}

double terse_rate(std::span<const TurnRecord> turns) {
  std::size_t hits = 0;
  for (const auto& t : turns) {
    hits += (t.token_count <= kTerseTokenLimit && parse_boxed(t.text).has_value()) ? 1 : 0;
  }
  return fraction(hits, turns.size());
}

std::string_view evaluator_form_name(EvaluatorForm f) {
  switch (f) {
    case EvaluatorForm::kPythonCodeFence: return "python_code_fence";
    case EvaluatorForm::kBareStamp: return "bare_stamp";
    case EvaluatorForm::kOther: return "other";
  }
  return "other";
}

EvaluatorForm classify_evaluator_form(std::string_view text, int token_count) {
  const auto scan = scan_fences(text);
  if (scan.max_body_lines >= 3) return EvaluatorForm::kPythonCodeFence;
  if (!scan.any_fence && token_count <= kBareStampTokenLimit &&
      parse_verdict(text) != Verdict::kUnknown) {
    return EvaluatorForm::kBareStamp;
  }
  return EvaluatorForm::kOther;
}

EvaluatorForm classify_evaluator_form(std::string_view text) {
  return classify_evaluator_form(text, static_cast<int>(whitespace_words(text).size()));
}

std::vector<double> length_percentiles(std::span<const TurnRecord> turns,
                                       std::span<const double> ps) {
  if (turns.empty()) throw Error("length_percentiles: empty input");
  std::vector<int> lens;
  for (const auto& t : turns) lens.push_back(t.token_count);
  std::sort(lens.begin(), lens.end());
  const double n = static_cast<double>(lens.size());
  std::vector<double> out;
  for (double p : ps) {
    if (p < 0.0 || p > 100.0) throw Error("percentile outside [0, 100]");
    const auto rank = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p / 100.0 * n)));
    out.push_back(lens[std::min(rank, lens.size()) - 1]);
  }
  return out;
}

std::string strategy_label(std::string_view text) {
  const auto nl = text.find('\n');
  const auto words = whitespace_words(to_lower(text.substr(0, nl)));
  std::string out;
  for (std::size_t i = 0; i < words.size() && i < 12; ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

int strategy_diversity(std::span<const std::string> texts) {
  std::set<std::string> labels;
  for (const auto& t : texts) labels.insert(strategy_label(t));
  return static_cast<int>(labels.size());
}

EpisodeRecord episode_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw SchemaError("record is not an object", line);
  if (!j.contains("turns") || !j["turns"].is_array()) throw SchemaError("missing turns[]", line);
  EpisodeRecord ep;
  try {
    ep.step = j.value("step", 0);
    if (j.contains("problem_id") && j["problem_id"].is_string()) {
      ep.problem_id = j["problem_id"].get<std::string>();
    } else {
      ep.problem_id = "line-" + std::to_string(line);
    }
    for (const auto& jt : j["turns"]) {
      if (!jt.is_object() || !jt.contains("role") || !jt["role"].is_string()) {
        throw SchemaError("turn without a role", line);
      }
      if (!jt.contains("text") || !jt["text"].is_string()) {
        throw SchemaError("turn without text", line);
      }
      TurnRecord t;
      t.role = jt["role"].get<std::string>();
      t.slot = jt.value("slot", 0);
      t.text = jt["text"].get<std::string>();
      if (jt.contains("token_count")) {
        t.token_count = jt["token_count"].get<int>();
      } else if (jt.contains("tokens") && jt["tokens"].is_array()) {
        t.token_count = static_cast<int>(jt["tokens"].size());
      } else {
        t.token_count = static_cast<int>(whitespace_words(t.text).size());
      }
      if (t.token_count < 0) throw SchemaError("negative token_count", line);
      t.finish_reason = jt.value("finish_reason", std::string("stop"));
      if (t.finish_reason != "stop" && t.finish_reason != "length") {
        throw SchemaError("finish_reason must be stop or length", line);
      }
      ep.turns.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad field type: ") + e.what(), line);
  }
  return ep;
}

std::vector<EpisodeRecord> read_episode_log(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<EpisodeRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw Error("cannot read " + f.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (is_blank(line)) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw SchemaError(f.string() + ": invalid JSON: " + e.what(), lineno);
      }
      out.push_back(episode_from_json(j, lineno));
    }
  }
  return out;
}

SignatureReport summarize(std::span<const EpisodeRecord> episodes) {
  std::map<int, std::vector<const EpisodeRecord*>> by_step;
  for (const auto& e : episodes) by_step[e.step].push_back(&e);

  SignatureReport report;
  for (const auto& [step, eps] : by_step) {
    StepSignature st;
    st.step = step;
    st.episodes = eps.size();

    struct RoleData {
      std::vector<TurnRecord> all;
      std::vector<TurnRecord> iter1;
      std::map<int, std::vector<TurnRecord>> by_slot;
      std::vector<std::vector<std::string>> slot_texts;  // per episode, iter-1 texts by slot
    };
    std::map<std::string, RoleData> roles;
    std::vector<TurnRecord> iter2_python_gen;

    for (const auto* ep : eps) {
      std::map<std::pair<std::string, int>, int> seen;
      std::map<std::string, std::map<int, std::string>> first_text;
      std::optional<EvaluatorForm> first_eval_form;
      for (const auto& t : ep->turns) {
        auto& rd = roles[t.role];
        rd.all.push_back(t);
        rd.by_slot[t.slot].push_back(t);
        const int occurrence = seen[{t.role, t.slot}]++;
        if (occurrence == 0) {
          rd.iter1.push_back(t);
          first_text[t.role][t.slot] = t.text;
          if (t.role == "evaluator" && !first_eval_form) {
            first_eval_form = classify_evaluator_form(t.text, t.token_count);
          }
        } else if (occurrence == 1 && t.role == "generator" &&
                   first_eval_form == EvaluatorForm::kPythonCodeFence) {
          iter2_python_gen.push_back(t);
        }
      }
      for (const auto& [role, slots] : first_text) {
        if (slots.size() < 2) continue;
        std::vector<std::string> texts;
        for (const auto& [slot, text] : slots) texts.push_back(text);
        roles[role].slot_texts.push_back(std::move(texts));
      }
    }

    for (auto& [name, rd] : roles) {
      RoleSignature rs;
      rs.role = name;
      rs.turns = rd.all.size();
      rs.length = length_stats(rd.all);
      for (const auto& [slot, turns] : rd.by_slot) {
        const auto s = length_stats(turns);
        rs.slot_avg_length.mean += s.mean;
        rs.slot_avg_length.p50 += s.p50;
        rs.slot_avg_length.p95 += s.p95;
      }
      const double slots = static_cast<double>(rd.by_slot.size());
      rs.slot_avg_length.mean /= slots;
      rs.slot_avg_length.p50 /= slots;
      rs.slot_avg_length.p95 /= slots;

      const auto texts = texts_of(rd.all);
      rs.truncation_rate = truncation_rate(rd.all);
      rs.boxed_retention = boxed_retention(texts);
      rs.hedging_rate = hedging_rate(texts);
      rs.terse_rate = terse_rate(rd.all);
      std::size_t c = 0, inc = 0;
      for (const auto& t : texts) {
        const auto v = parse_verdict(t);
        c += v == Verdict::kCorrect ? 1 : 0;
        inc += v == Verdict::kIncorrect ? 1 : 0;
      }
      rs.verdicts = {fraction(c, texts.size()), fraction(inc, texts.size()),
                     fraction(texts.size() - c - inc, texts.size()),
                     fraction(c + inc, texts.size())};
      if (!rd.slot_texts.empty()) rs.inter_slot_jaccard = inter_slot_jaccard(rd.slot_texts, kJaccardN);
      rs.strategy_diversity = strategy_diversity(texts_of(rd.iter1));

      rs.iter1_turns = rd.iter1.size();
      rs.iter1_length = length_stats(rd.iter1);
      rs.iter1_truncation_rate = truncation_rate(rd.iter1);
      rs.iter1_boxed_retention = boxed_retention(texts_of(rd.iter1));
      std::size_t py = 0, bare = 0;
      for (const auto& t : rd.iter1) {
        const auto f = classify_evaluator_form(t.text, t.token_count);
        py += f == EvaluatorForm::kPythonCodeFence ? 1 : 0;
        bare += f == EvaluatorForm::kBareStamp ? 1 : 0;
      }
      const std::size_t n1 = rd.iter1.size();
      rs.iter1_forms = {fraction(py, n1), fraction(bare, n1), fraction(n1 - py - bare, n1)};
      st.roles[name] = std::move(rs);
    }
    if (!iter2_python_gen.empty()) st.iter2_generator_p50_python_bucket = length_stats(iter2_python_gen).p50;
    report.steps.push_back(std::move(st));
  }
  return report;
}

SignatureReport build_report(const std::filesystem::path& log_path) {
  const auto episodes = read_episode_log(log_path);
  return summarize(episodes);
}

json to_json(const StepSignature& s) {
  json roles = json::object();
  for (const auto& [name, r] : s.roles) {
    roles[name] = {
        {"turns", r.turns},
        {"length", length_json(r.length)},
        {"slot_avg_length", length_json(r.slot_avg_length)},
        {"truncation_rate", r.truncation_rate},
        {"boxed_retention", r.boxed_retention},
        {"hedging_rate", r.hedging_rate},
        {"terse_rate", r.terse_rate},
        {"verdicts",
         {{"correct", r.verdicts.correct},
          {"incorrect", r.verdicts.incorrect},
          {"unknown", r.verdicts.unknown},
          {"retention", r.verdicts.retention}}},
        {"inter_slot_jaccard", r.inter_slot_jaccard ? json(*r.inter_slot_jaccard) : json(nullptr)},
        {"strategy_diversity", r.strategy_diversity},
        {"iter1",
         {{"turns", r.iter1_turns},
          {"length", length_json(r.iter1_length)},
          {"truncation_rate", r.iter1_truncation_rate},
          {"boxed_retention", r.iter1_boxed_retention},
          {"forms",
           {{"python_code_fence", r.iter1_forms.python_code_fence},
            {"bare_stamp", r.iter1_forms.bare_stamp},
            {"other", r.iter1_forms.other}}}}},
    };
  }
  return {{"step", s.step},
          {"episodes", s.episodes},
          {"roles", roles},
          {"iter2_generator_p50_python_bucket",
           s.iter2_generator_p50_python_bucket ? json(*s.iter2_generator_p50_python_bucket)
                                               : json(nullptr)}};
}

json to_json(const SignatureReport& r) {
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  return {{"steps", steps}};
}

std::vector<SignatureRow> signature_rows(const StepSignature& s) {
  std::vector<SignatureRow> out;
  const json j = to_json(s);
  for (const auto& [role, rj] : j["roles"].items()) {
    std::vector<std::pair<std::string, double>> rows;
    flatten_json(rj, "", rows);
    for (auto& [metric, v] : rows) out.push_back({role, std::move(metric), v});
  }
  if (s.iter2_generator_p50_python_bucket) {
    out.push_back({"generator", "iter2_p50_python_bucket", *s.iter2_generator_p50_python_bucket});
  }
  return out;
}

void write_report(const SignatureReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& s : report.steps) {
    const auto dir = out_dir / ("step_" + std::to_string(s.step));
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json") << to_json(s).dump(2) << '\n';
    std::ofstream csv(dir / "report.csv");
    csv << "step,role,metric,value\n";
    csv.precision(17);
    for (const auto& r : signature_rows(s)) {
      csv << s.step << ',' << r.role << ',' << r.metric << ',' << r.value << '\n';
    }
  }
}

}  // namespace rolelab
