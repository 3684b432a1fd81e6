#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "rolelab/common.hpp"
#include "rolelab/matrix.hpp"
#include "rolelab/vocab.hpp"

namespace rolelab {

// Column layout of the context feature vector:
//   [ role one-hot | last-token one-hot | hashed context bag | position bucket ]
struct FeatureLayout {
  int vocab = kVocabSize;
  int dim = 0;
  int role_offset = 0;
  int last_token_offset = 0;
  int bag_offset = 0;
  int bag_size = 0;
  int position_offset = 0;

  static constexpr int kPositionBuckets = 8;

  // Throws ConfigError when dim cannot hold the fixed blocks plus a bag of at
  // least 8 columns.
  static FeatureLayout for_dim(int vocab, int dim);

  int role_column(Role r) const { return role_offset + static_cast<int>(r); }
  int last_token_column(Token t) const { return last_token_offset + t; }
  int position_column(int bucket) const { return position_offset + bucket; }
  int bag_column(std::uint64_t hash) const {
    return bag_offset + static_cast<int>(hash % static_cast<std::uint64_t>(bag_size));
  }
};

int position_bucket(std::size_t position);

// What a turn can see: the task prompt plus earlier turns exposed by the
// workflow wiring, in wiring order.
struct Context {
  std::vector<Token> task;
  std::vector<std::vector<Token>> visible;

  // task, then SEP-delimited visible segments.
  std::vector<Token> flatten() const;
  bool operator==(const Context&) const = default;
};

// Sparse view of phi: sorted (column, value) pairs, every value in (0, 1].
struct ContextFeatures {
  int dim = 0;
  std::vector<std::pair<int, double>> entries;

  std::vector<double> dense() const;
  bool operator==(const ContextFeatures&) const = default;
};

// Precomputes the role and bag blocks for one turn so per-token features only
// add the last-token and position columns.
class ContextEncoder {
 public:
  ContextEncoder(const FeatureLayout& layout, Role role, const Context& context);

  ContextFeatures features(std::span<const Token> prefix) const;
  // Features at position `position` given the previous token (kBos at start).
  ContextFeatures features_at(std::size_t position, Token last) const;

 private:
  const FeatureLayout* layout_;
  std::vector<std::pair<int, double>> fixed_;  // role + bag, sorted
};

ContextFeatures encode_context(const FeatureLayout& layout, Role role, const Context& context,
                               std::span<const Token> prefix);
// Convenience form treating the whole prompt as the task segment.
ContextFeatures encode_context(const FeatureLayout& layout, Role role,
                               std::span<const Token> prompt, std::span<const Token> prefix);

// Frozen base policy. `base` is V x D and never changes after construction.
class PolicyParams {
 public:
  // Base entries i.i.d. uniform in [-init_scale, init_scale] from `seed`, plus
  // `prior_strength` times a hand-written grammar prior that keeps base
  // accuracy above zero (0 disables it).
  static PolicyParams create(const FeatureLayout& layout, std::uint64_t seed,
                             double prior_strength = 1.0, double init_scale = 0.1);
  // Wraps an explicit base matrix (tests).
  static PolicyParams from_matrix(const FeatureLayout& layout, Matrix base,
                                  std::uint64_t seed = 0);

  const Matrix& base() const { return base_; }
  const FeatureLayout& layout() const { return layout_; }
  int vocab() const { return base_.rows(); }
  int dim() const { return base_.cols(); }
  std::uint64_t seed() const { return seed_; }

 private:
  PolicyParams(const FeatureLayout& layout, Matrix base, std::uint64_t seed)
      : layout_(layout), base_(std::move(base)), seed_(seed) {}

  FeatureLayout layout_;
  Matrix base_;
  std::uint64_t seed_ = 0;
};

// Trainable additive delta plus AdamW moments.
struct AdapterDelta {
  Matrix delta;
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t step_count = 0;

  static AdapterDelta zeros(int vocab, int dim);
  static AdapterDelta zeros_like(const PolicyParams& params) {
    return zeros(params.vocab(), params.dim());
  }
  bool operator==(const AdapterDelta&) const = default;
};

// (base + delta) . phi
std::vector<double> logits(const PolicyParams& params, const AdapterDelta& adapter,
                           const ContextFeatures& phi);

// log softmax(logits / temperature)
std::vector<double> log_distribution(std::span<const double> logits, double temperature);

std::vector<double> token_distribution(const PolicyParams& params, const AdapterDelta& adapter,
                                       const ContextFeatures& phi, double temperature);

double log_prob(const PolicyParams& params, const AdapterDelta& adapter,
                const ContextFeatures& phi, Token token, double temperature = 1.0);

double entropy(const PolicyParams& params, const AdapterDelta& adapter,
               const ContextFeatures& phi, double temperature);

double entropy_from_log_probs(std::span<const double> log_probs);

// Score function d log pi(token | phi) / d delta at temperature 1:
// (onehot(token) - p) outer phi.
Matrix grad_log_prob(const PolicyParams& params, const AdapterDelta& adapter,
                     const ContextFeatures& phi, Token token);

// out += scale * (onehot(token) - p) outer phi, where `probs` is the
// temperature-1 distribution at phi. Only touches phi's support columns.
void accumulate_score(std::span<const double> probs, const ContextFeatures& phi, Token token,
                      double scale, Matrix& out);

// Adapter checkpoint: one JSON header line followed by raw little-endian
// float64 blocks (delta, first moment, second moment).
void save_adapter(const std::filesystem::path& path, const AdapterDelta& adapter,
                  std::uint64_t seed, const std::string& name);
AdapterDelta load_adapter(const std::filesystem::path& path);

}  // namespace rolelab
