#include "rolelab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"

namespace rolelab {

namespace {

constexpr std::uint64_t kUnigramSalt = 0x11;
constexpr std::uint64_t kPairSalt = 0x22;
constexpr std::uint64_t kAnswerSalt = 0x33;
constexpr std::uint64_t kSlotAnswerSalt = 0x44;

std::uint64_t hash_tokens(std::span<const Token> tokens) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Token t : tokens) h = mix64(h ^ static_cast<std::uint64_t>(t + 1));
  return h;
}

void push_unique(std::vector<std::pair<int, double>>& entries, int column, double value) {
  for (auto& [c, v] : entries) {
    if (c == column) {
      v = std::max(v, value);
      return;
    }
  }
  entries.emplace_back(column, value);
}

void add_prior(Matrix& base, int column, Token next, double w) {
  base(next, column) += w;
}

void add_digit_prior(Matrix& base, int column, double w) {
  for (int d = 0; d < 10; ++d) add_prior(base, column, digit_token(d), w);
}

void add_grammar_prior(Matrix& base, const FeatureLayout& layout, double s) {
  auto bigram = [&](Token prev, Token next, double w) {
    add_prior(base, layout.last_token_column(prev), next, s * w);
  };
  auto bigram_digits = [&](Token prev, double w) {
    add_digit_prior(base, layout.last_token_column(prev), s * w);
  };
  auto role = [&](Role r, Token next, double w) {
    add_prior(base, layout.role_column(r), next, s * w);
  };

  bigram(tok::kBos, tok::kBoxOpen, 2.0);
  bigram(tok::kBos, tok::kSo, 1.0);
  bigram(tok::kBos, tok::kThe, 0.5);
  bigram(tok::kBos, tok::kCheck, 0.3);
  bigram(tok::kBos, tok::kPlan, 0.3);
  bigram(tok::kBos, tok::kWait, 0.2);
  bigram(tok::kBos, tok::kHmm, 0.2);
  bigram(tok::kBos, tok::kFence, 0.5);

  bigram(tok::kSo, tok::kThe, 1.0);
  bigram(tok::kSo, tok::kAnswer, 0.8);
  bigram(tok::kSo, tok::kBoxOpen, 1.5);
  bigram(tok::kSo, tok::kIs, 0.5);
  bigram(tok::kThe, tok::kAnswer, 2.0);
  bigram(tok::kThe, tok::kPlan, 0.5);
  bigram(tok::kAnswer, tok::kIs, 2.0);
  bigram(tok::kAnswer, tok::kBoxOpen, 1.0);
  bigram(tok::kIs, tok::kBoxOpen, 2.5);
  bigram_digits(tok::kIs, 0.5);
  for (Token hedge : {tok::kWait, tok::kHmm, tok::kActually, tok::kAlternatively}) {
    bigram(hedge, tok::kSo, 1.0);
    bigram(hedge, tok::kThe, 0.5);
    bigram(hedge, tok::kBoxOpen, 1.0);
  }
  bigram(tok::kCheck, tok::kBoxOpen, 1.5);
  bigram(tok::kCheck, tok::kThe, 0.5);
  bigram(tok::kCheck, tok::kEos, 0.5);
  bigram(tok::kPlan, tok::kCheck, 0.5);
  bigram(tok::kPlan, tok::kThe, 0.5);
  bigram(tok::kPlan, tok::kSo, 0.5);
  bigram(tok::kPlan, tok::kEos, 1.0);

  bigram_digits(tok::kBoxOpen, 3.0);
  bigram(tok::kBoxOpen, tok::kCorrect, 1.0);
  bigram(tok::kBoxOpen, tok::kIncorrect, 1.0);
  for (int d = 0; d < 10; ++d) {
    bigram(digit_token(d), tok::kBoxClose, 2.5);
    bigram(digit_token(d), tok::kTimes, 0.5);
    bigram(digit_token(d), tok::kPlus, 0.5);
    bigram(digit_token(d), tok::kNewline, 0.5);
  }
  bigram(tok::kBoxClose, tok::kEos, 4.0);
  bigram(tok::kCorrect, tok::kBoxClose, 4.0);
  bigram(tok::kIncorrect, tok::kBoxClose, 4.0);

  bigram(tok::kFence, tok::kNewline, 1.0);
  bigram_digits(tok::kFence, 1.5);
  bigram(tok::kFence, tok::kX, 0.5);
  bigram(tok::kFence, tok::kEos, 0.5);
  bigram(tok::kNewline, tok::kFence, 1.5);
  bigram_digits(tok::kNewline, 0.5);
  bigram(tok::kNewline, tok::kX, 0.5);
  bigram(tok::kX, tok::kPlus, 2.0);
  bigram(tok::kX, tok::kNewline, 1.0);
  bigram(tok::kTimes, tok::kX, 3.0);
  bigram_digits(tok::kPlus, 2.5);
  bigram(tok::kSep, tok::kEos, 1.0);

  for (int r = 0; r < kNumRoles; ++r) {
    role(static_cast<Role>(r), tok::kBos, -4.0);
    role(static_cast<Role>(r), tok::kSep, -3.0);
  }
  role(Role::kEvaluator, tok::kCorrect, 2.0);
  role(Role::kEvaluator, tok::kIncorrect, 1.5);
  add_digit_prior(base, layout.role_column(Role::kEvaluator), -2.0 * s);
  role(Role::kEvaluator, tok::kSo, -1.0);
  role(Role::kEvaluator, tok::kThe, -1.0);
  for (int d = 1; d <= 3; ++d) role(Role::kAggregator, digit_token(d), 1.5);
  role(Role::kAggregator, tok::kSo, -1.0);
  role(Role::kAggregator, tok::kThe, -1.0);
  role(Role::kOrchestrator, tok::kPlan, 2.0);
  role(Role::kOrchestrator, tok::kCheck, 1.0);
  role(Role::kOrchestrator, tok::kBoxOpen, -2.0);
  role(Role::kOrchestrator, tok::kEos, 0.5);

  // Longer emissions lean toward stopping.
  for (int b = 4; b < FeatureLayout::kPositionBuckets; ++b) {
    add_prior(base, layout.position_column(b), tok::kEos, s * 0.75 * (b - 3));
  }

  // Code prompts carry the x token: prefer fenced programs over boxed answers.
  const int code_col = layout.bag_column(mix64(kUnigramSalt ^ mix64(tok::kX + 1)));
  add_prior(base, code_col, tok::kFence, s * 2.0);
  add_prior(base, code_col, tok::kBoxOpen, s * -2.0);
  add_prior(base, code_col, tok::kBoxClose, s * -2.0);
  add_prior(base, code_col, tok::kTimes, s * 1.0);
}

}  // namespace

FeatureLayout FeatureLayout::for_dim(int vocab, int dim) {
  FeatureLayout l;
  l.vocab = vocab;
  l.dim = dim;
  l.role_offset = 0;
  l.last_token_offset = kNumRoles;
  l.bag_offset = l.last_token_offset + vocab;
  l.bag_size = dim - l.bag_offset - kPositionBuckets;
  l.position_offset = dim - kPositionBuckets;
  if (vocab < 8) throw ConfigError("vocabulary must hold at least 8 tokens");
  if (l.bag_size < 8) {
    throw ConfigError("feature dimension " + std::to_string(dim) + " too small for vocabulary " +
                      std::to_string(vocab));
  }
  return l;
}

int position_bucket(std::size_t position) {
  if (position < 4) return static_cast<int>(position);
  if (position < 8) return 4;
  if (position < 16) return 5;
  if (position < 32) return 6;
  return 7;
}

std::vector<Token> Context::flatten() const {
  std::vector<Token> out = task;
  for (const auto& seg : visible) {
    out.push_back(tok::kSep);
    out.insert(out.end(), seg.begin(), seg.end());
  }
  return out;
}

std::vector<double> ContextFeatures::dense() const {
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (const auto& [c, v] : entries) out[static_cast<std::size_t>(c)] = v;
  return out;
}

ContextEncoder::ContextEncoder(const FeatureLayout& layout, Role role, const Context& context)
    : layout_(&layout) {
  fixed_.emplace_back(layout.role_column(role), 1.0);

  auto unigram = [&](Token t) {
    push_unique(fixed_, layout.bag_column(mix64(kUnigramSalt ^ mix64(t + 1))), 1.0);
  };
  for (Token t : context.task) unigram(t);
  for (std::size_t i = 0; i < context.task.size(); ++i) {
    for (std::size_t j = i + 1; j < context.task.size(); ++j) {
      const std::uint64_t h = mix64(kPairSalt ^ mix64(context.task[i] + 1) ^
                                    (static_cast<std::uint64_t>(context.task[j] + 1) << 20));
      push_unique(fixed_, layout.bag_column(h), 1.0);
    }
  }
  const std::uint64_t task_hash = hash_tokens(context.task);
  for (std::size_t s = 0; s < context.visible.size(); ++s) {
    for (Token t : context.visible[s]) unigram(t);
    if (auto content = boxed_content_tokens(context.visible[s])) {
      const std::uint64_t ch = hash_tokens(*content);
      push_unique(fixed_, layout.bag_column(mix64(kAnswerSalt ^ task_hash ^ mix64(ch))), 1.0);
      push_unique(fixed_, layout.bag_column(mix64(kSlotAnswerSalt ^ mix64(s + 1) ^ ch)), 1.0);
    }
  }
  std::sort(fixed_.begin(), fixed_.end());
}

ContextFeatures ContextEncoder::features_at(std::size_t position, Token last) const {
  ContextFeatures f;
  f.dim = layout_->dim;
  f.entries = fixed_;
  f.entries.emplace_back(layout_->last_token_column(last), 1.0);
  f.entries.emplace_back(layout_->position_column(position_bucket(position)), 1.0);
  std::sort(f.entries.begin(), f.entries.end());
  return f;
}

ContextFeatures ContextEncoder::features(std::span<const Token> prefix) const {
  return features_at(prefix.size(), prefix.empty() ? tok::kBos : prefix.back());
}

ContextFeatures encode_context(const FeatureLayout& layout, Role role, const Context& context,
                               std::span<const Token> prefix) {
  return ContextEncoder(layout, role, context).features(prefix);
}

ContextFeatures encode_context(const FeatureLayout& layout, Role role,
                               std::span<const Token> prompt, std::span<const Token> prefix) {
  Context ctx;
  ctx.task.assign(prompt.begin(), prompt.end());
  return encode_context(layout, role, ctx, prefix);
}

PolicyParams PolicyParams::create(const FeatureLayout& layout, std::uint64_t seed,
                                  double prior_strength, double init_scale) {
  Matrix base(layout.vocab, layout.dim);
  Rng rng(derive_seed(seed, 0xba5e));
  for (double& x : base.data()) x = rng.uniform(-init_scale, init_scale);
  if (prior_strength != 0.0) {
    if (layout.vocab < kVocabSize) {
      throw ConfigError("grammar prior needs the full " + std::to_string(kVocabSize) +
                        "-token vocabulary");
    }
    add_grammar_prior(base, layout, prior_strength);
  }
  return PolicyParams(layout, std::move(base), seed);
}

PolicyParams PolicyParams::from_matrix(const FeatureLayout& layout, Matrix base,
                                       std::uint64_t seed) {
  if (base.rows() != layout.vocab || base.cols() != layout.dim) {
    throw ConfigError("base matrix does not match feature layout");
  }
  return PolicyParams(layout, std::move(base), seed);
}

AdapterDelta AdapterDelta::zeros(int vocab, int dim) {
  AdapterDelta a;
  a.delta = Matrix(vocab, dim);
  a.first_moment = Matrix(vocab, dim);
  a.second_moment = Matrix(vocab, dim);
  return a;
}

std::vector<double> logits(const PolicyParams& params, const AdapterDelta& adapter,
                           const ContextFeatures& phi) {
  const Matrix& base = params.base();
  const Matrix& delta = adapter.delta;
  if (!base.same_shape(delta)) throw Error("adapter shape does not match base");
  std::vector<double> z(static_cast<std::size_t>(base.rows()), 0.0);
  for (int k = 0; k < base.rows(); ++k) {
    double acc = 0.0;
    for (const auto& [c, v] : phi.entries) acc += (base(k, c) + delta(k, c)) * v;
    z[static_cast<std::size_t>(k)] = acc;
  }
  return z;
}

std::vector<double> log_distribution(std::span<const double> z, double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  std::vector<double> out(z.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : z) mx = std::max(mx, x / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = z[i] / temperature - mx;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& x : out) x -= lse;
  return out;
}

std::vector<double> token_distribution(const PolicyParams& params, const AdapterDelta& adapter,
                                       const ContextFeatures& phi, double temperature) {
  auto lp = log_distribution(logits(params, adapter, phi), temperature);
  for (double& x : lp) x = std::exp(x);
  return lp;
}

double log_prob(const PolicyParams& params, const AdapterDelta& adapter,
                const ContextFeatures& phi, Token token, double temperature) {
  if (token < 0 || token >= params.vocab()) throw Error("token out of range");
  return log_distribution(logits(params, adapter, phi), temperature)[static_cast<std::size_t>(token)];
}

double entropy_from_log_probs(std::span<const double> log_probs) {
  double h = 0.0;
  for (double lp : log_probs) h -= std::exp(lp) * lp;
  return std::max(h, 0.0);
}

double entropy(const PolicyParams& params, const AdapterDelta& adapter,
               const ContextFeatures& phi, double temperature) {
  return entropy_from_log_probs(log_distribution(logits(params, adapter, phi), temperature));
}

void accumulate_score(std::span<const double> probs, const ContextFeatures& phi, Token token,
                      double scale, Matrix& out) {
  const int vocab = out.rows();
  for (int k = 0; k < vocab; ++k) {
    const double coeff = scale * ((k == token ? 1.0 : 0.0) - probs[static_cast<std::size_t>(k)]);
    for (const auto& [c, v] : phi.entries) out(k, c) += coeff * v;
  }
}

Matrix grad_log_prob(const PolicyParams& params, const AdapterDelta& adapter,
                     const ContextFeatures& phi, Token token) {
  if (token < 0 || token >= params.vocab()) throw Error("token out of range");
  Matrix g(params.vocab(), params.dim());
  accumulate_score(token_distribution(params, adapter, phi, 1.0), phi, token, 1.0, g);
  return g;
}

void save_adapter(const std::filesystem::path& path, const AdapterDelta& adapter,
                  std::uint64_t seed, const std::string& name) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nlohmann::json header = {
      {"format", "rolelab-adapter-v1"},
      {"name", name},
      {"shape", {adapter.delta.rows(), adapter.delta.cols()}},
      {"dtype", "float64-le"},
      {"blocks", {"delta", "first_moment", "second_moment"}},
      {"seed", seed},
      {"step_count", adapter.step_count},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << header.dump() << '\n';
  for (const Matrix* m : {&adapter.delta, &adapter.first_moment, &adapter.second_moment}) {
    const auto d = m->data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
}

AdapterDelta load_adapter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "rolelab-adapter-v1") {
    throw Error("unrecognized adapter format in " + path.string());
  }
  const int rows = header.at("shape").at(0).get<int>();
  const int cols = header.at("shape").at(1).get<int>();
  AdapterDelta a = AdapterDelta::zeros(rows, cols);
  a.step_count = header.at("step_count").get<std::int64_t>();
  for (Matrix* m : {&a.delta, &a.first_moment, &a.second_moment}) {
    auto d = m->data();
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!in) throw Error("truncated adapter file " + path.string());
  }
  return a;
}

}  // namespace rolelab
