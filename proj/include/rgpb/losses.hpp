#pragma once

// Sequence losses that reward a positive pair (x+, y+) and, except for MLE,
// penalize a negative pair (x-, y-).
//
//   MLE     -(1/T+) sum log P(y+_t)
//   DPO     -log sigmoid(beta [log P(y+|x+)/Pref(y+|x+) - log P(y-|x-)/Pref(y-|x-)])
//   UL      -(1/T+) sum log P(y+_t) - beta (1/T-) sum log(1 - P(y-_t))
//   ExMATE  -(1/T+) sum log P(y+_t) + beta exp((1/T-) sum log P(y-_t))
//
// DPO uses whole-sequence log-probabilities (no 1/T). UL and ExMATE normalize
// each side by its own length. Negative sampling (word2vec) is UL with
// beta = 1 on single-step sequences, so it has no separate entry here.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rgpb/lm_core.hpp"

namespace rgpb {

enum class Method { kMle, kDpo, kUl, kExmate };

/// Reference model for DPO's log-ratios. kUnit means P_ref == 1.
enum class RefPolicy { kUnit, kFrozenCopy };

std::string_view to_string(Method method);
std::string_view to_string(RefPolicy policy);
/// Accepts "mle", "sft", "dpo", "ul", "unlikelihood", "exmate" (any case).
std::optional<Method> parse_method(std::string_view text);
std::optional<RefPolicy> parse_ref_policy(std::string_view text);

struct LossSpec {
  Method method = Method::kMle;
  double beta = 1.0;
  RefPolicy ref_policy = RefPolicy::kUnit;

  /// Throws std::invalid_argument for a negative or non-finite beta.
  /// Returns warnings (ref_policy set on a method that ignores it).
  std::vector<std::string> validate() const;

  bool uses_reference() const noexcept {
    return method == Method::kDpo && ref_policy == RefPolicy::kFrozenCopy;
  }

  /// "exmate(beta=1)" style label.
  std::string label() const;

  bool operator==(const LossSpec&) const = default;
};

struct Stage {
  LossSpec loss;
  std::size_t epochs = 0;

  bool operator==(const Stage&) const = default;
};

struct Schedule {
  std::vector<Stage> stages;

  static Schedule single(LossSpec loss, std::size_t epochs) { return Schedule{{Stage{loss, epochs}}}; }

  void validate() const;
  std::size_t total_epochs() const;
  /// Index of the stage active during 0-based training epoch `epoch`.
  std::size_t stage_index(std::size_t epoch) const;
  /// "mle:5+dpo:3" style label.
  std::string label() const;
};

/// Loss active during 0-based `epoch`. Throws std::out_of_range past the end.
const LossSpec& composite_loss(const Schedule& schedule, std::size_t epoch);

// ---------------------------------------------------------------------------
// Kernels over per-step log-probabilities. `d_pos[t]` / `d_neg[t]` are the
// derivatives of the loss with respect to log P(y+_t) / log P(y-_t).

struct LossTerms {
  double value = 0.0;
  std::vector<double> d_pos;
  std::vector<double> d_neg;
};

LossTerms mle_terms(std::span<const double> pos_logprobs);
LossTerms dpo_terms(std::span<const double> pos_logprobs, std::span<const double> neg_logprobs,
                    double ref_pos, double ref_neg, double beta);
/// Throws DomainError naming the step when P(y-_t) rounds to 1.
LossTerms ul_terms(std::span<const double> pos_logprobs, std::span<const double> neg_logprobs,
                   double beta);
LossTerms exmate_terms(std::span<const double> pos_logprobs, std::span<const double> neg_logprobs,
                       double beta);

/// Dispatch on spec.method. ref_pos / ref_neg are reference sequence
/// log-probabilities (0 for a unit reference).
LossTerms loss_terms(const LossSpec& spec, std::span<const double> pos_logprobs,
                     std::span<const double> neg_logprobs, double ref_pos = 0.0,
                     double ref_neg = 0.0);

/// ExMATE's penalty beta * exp(mean log P(y-_t)), the scaled geometric mean.
double exmate_penalty(std::span<const double> neg_logprobs, double beta);

/// Single-step losses written directly in probabilities (unit reference).
/// Used for landscape sweeps and engineered examples.
double single_step_loss(Method method, double p_pos, double p_neg, double beta);

// ---------------------------------------------------------------------------
// Model-level losses.

/// Mean over the batch of the per-token NLL of (x+, y+).
double mle_loss(const ToyLM& model, std::span<const PreferencePair> batch);
/// `reference == nullptr` means P_ref == 1.
double dpo_loss(const ToyLM& model, const ToyLM* reference, const PreferencePair& pair, double beta);
double ul_loss(const ToyLM& model, const PreferencePair& pair, double beta);
double exmate_loss(const ToyLM& model, const PreferencePair& pair, double beta);

/// Loss of one pair under `spec`. A frozen-copy DPO spec requires `reference`.
double pair_loss(const ToyLM& model, const LossSpec& spec, const PreferencePair& pair,
                 const ToyLM* reference = nullptr);
/// Mean of pair_loss over the batch, reduced in index order.
double batch_loss(const ToyLM& model, const LossSpec& spec, std::span<const PreferencePair> batch,
                  const ToyLM* reference = nullptr);

}  // namespace rgpb
