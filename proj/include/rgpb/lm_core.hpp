#pragma once

// Toy autoregressive softmax language model.
//
//   ctx    = mean(embed[x_i])                      (zero vector when x is empty)
//   last   = embed[y_{t-1}]  or embed[BOS] at t = 1 (BOS is row |V|)
//   h      = tanh(w1 [ctx ; last] + b1)
//   logits = w2 h + b2,   P(.|x, y_<t) = softmax(logits)
//
// Everything is 64-bit. Identical (x, y_<t) give bit-identical logits, which
// is what lets the shared-context analysis be tested exactly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rgpb/matrix.hpp"
#include "rgpb/rng.hpp"

namespace rgpb {

using TokenId = std::uint32_t;

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  /// Tokens "t0" .. "t{n-1}".
  static Vocab synthetic(std::size_t size);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSeq {
  std::vector<TokenId> ids;

  TokenSeq() = default;
  TokenSeq(std::initializer_list<TokenId> init) : ids(init) {}
  explicit TokenSeq(std::vector<TokenId> v) : ids(std::move(v)) {}

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }

  /// Throws std::invalid_argument when an id is >= vocab_size.
  void validate(std::size_t vocab_size, std::string_view what = "sequence") const;

  bool operator==(const TokenSeq&) const = default;
};

struct PreferencePair {
  TokenSeq x_pos;
  TokenSeq y_pos;
  TokenSeq x_neg;
  TokenSeq y_neg;

  /// y sequences nonempty and every id < vocab_size.
  void validate(std::size_t vocab_size) const;

  bool operator==(const PreferencePair&) const = default;
};

/// The five parameter blocks, shared by the model and its gradient.
struct ParameterBlocks {
  Matrix embed;  // (|V|+1) x d, last row is BOS
  Matrix w1;     // d_h x 2d
  Matrix b1;     // d_h x 1
  Matrix w2;     // |V| x d_h
  Matrix b2;     // |V| x 1

  static constexpr std::array<std::string_view, 5> kBlockNames{"embed", "w1", "b1", "w2", "b2"};

  std::array<Matrix*, 5> blocks() { return {&embed, &w1, &b1, &w2, &b2}; }
  std::array<const Matrix*, 5> blocks() const { return {&embed, &w1, &b1, &w2, &b2}; }

  std::size_t parameter_count() const;
  bool same_shapes(const ParameterBlocks& other) const;
  bool all_finite() const;

  bool operator==(const ParameterBlocks&) const = default;
};

class ToyLM : public ParameterBlocks {
 public:
  ToyLM() = default;
  /// All-zero model (uniform predictions).
  ToyLM(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim);

  /// Every parameter drawn from N(0, scale^2).
  static ToyLM random(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                      double scale, Rng& rng);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t embed_dim() const noexcept { return embed_dim_; }
  std::size_t hidden_dim() const noexcept { return hidden_dim_; }
  TokenId bos() const noexcept { return static_cast<TokenId>(vocab_size_); }

  /// Throws StateError on inconsistent shapes or non-finite entries.
  void check_state() const;

  /// Order-dependent hash of the raw parameter bits.
  std::uint64_t checksum() const;

 private:
  std::size_t vocab_size_ = 0;
  std::size_t embed_dim_ = 0;
  std::size_t hidden_dim_ = 0;
};

struct Gradient : ParameterBlocks {
  Gradient() = default;
  /// Zero gradient shaped like `model`.
  explicit Gradient(const ToyLM& model);

  void scale(double factor);
  void add(const Gradient& other, double factor = 1.0);
  double max_abs() const;
};

struct StepDistribution {
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> log_probs;  // logits - logsumexp(logits)

  static StepDistribution from_logits(std::vector<double> logits);
  std::size_t size() const noexcept { return probs.size(); }
};

/// Next-token distribution P(. | x, y_prefix).
StepDistribution forward_step(const ToyLM& model, const TokenSeq& x, const TokenSeq& y_prefix);

struct SeqLogProb {
  double total = 0.0;         // log P(y | x)
  std::vector<double> steps;  // log P(y_t | x, y_<t)
};

/// Sum of per-step log-softmax terms. Requires y nonempty.
SeqLogProb seq_logprob(const ToyLM& model, const TokenSeq& x, const TokenSeq& y);

/// J(j, i) = d softmax_j / d z_i.
Matrix softmax_jacobian(const StepDistribution& dist);

// ---------------------------------------------------------------------------
// Reverse-mode building blocks. These skip input validation; callers validate
// once per pair.

/// Mean-pooled context embedding of x.
std::vector<double> pool_context(const ToyLM& model, const TokenSeq& x);

struct StepTrace {
  std::vector<double> input;   // [ctx ; embed[last_row]]
  std::vector<double> hidden;  // tanh activations
  TokenId last_row = 0;
  StepDistribution dist;
};

StepTrace trace_step(const ToyLM& model, std::span<const double> context, TokenId last_row);

/// Traces every step of y under context x (step t conditions on y_<t).
std::vector<StepTrace> trace_sequence(const ToyLM& model, const TokenSeq& x, const TokenSeq& y);

/// Accumulates into `grad` the parameter gradient of a scalar whose
/// derivative with respect to this step's logits is `dlogits`.
void backprop_step(const ToyLM& model, const TokenSeq& x, const StepTrace& trace,
                   std::span<const double> dlogits, Gradient& grad);

// ---------------------------------------------------------------------------
// Checkpoints: magic "TOYLMCKP", u32 version, u64 |V|, d, d_h, then the
// blocks embed, w1, b1, w2, b2 as little-endian IEEE doubles.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const ToyLM& model, std::ostream& out);
ToyLM read_checkpoint(std::istream& in);
void save_checkpoint(const ToyLM& model, const std::filesystem::path& path);
ToyLM load_checkpoint(const std::filesystem::path& path);

}  // namespace rgpb
