#pragma once
// Closed-form gradient analysis of the preference losses and the checks that
// tie it to the reverse-mode engine.
//
// Logit factors are written as ascent directions, -dL/dz for the logit of
// token z at one step where y+_t != y-_t. With f+ = u and f- = u + eps:
//
//   DPO     c (1 - P+(y+) + P-(y+)),  c (-P+(y-) - 1 + P-(y-)),  c (-P+(z) + P-(z))
//           with c = beta (u+eps)^beta / ((u+eps)^beta + u^beta)
//   UL      1 - P+(y+) + beta q P-(y+)/(1-q),  -P+(y-) - beta q,  -P+(z) + beta q P-(z)/(1-q)
//   ExMATE  1 - P+(y+) + beta q P-(y+),  -P+(y-) - beta q (1-q),  -P+(z) + beta q P-(z)
//
// where q = P-(y-). When y+_t = y-_t the update collapses onto the gradient of
// the shared token's probability, scaled by same_token_coeff.
//
// At one step with a shared context, an empty prefix and a unit reference,
// P+ and P- are the same distribution and these expressions are exact.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rgpb/lm_core.hpp"
#include "rgpb/losses.hpp"

namespace rgpb {

struct AnalysisPoint {
  double u = 0.5;        // f+
  double epsilon = 0.0;  // f- - f+
  double beta = 1.0;
  /// Next-token probabilities under the positive and negative conditioning.
  /// Entries must lie in [0, 1]; they need not sum to one, which lets one
  /// probability move while the others stay fixed.
  std::vector<double> p_plus;
  std::vector<double> p_minus;
  TokenId y_pos = 0;
  TokenId y_neg = 1;

  /// Throws DomainError when u or u + eps leaves (0, 1), and
  /// std::invalid_argument for bad vectors, token ids or beta.
  void validate() const;
};

struct LogitFactorSet {
  double factor_ypos = 0.0;
  double factor_yneg = 0.0;
  /// Indexed by token; zero at y+ and y-.
  std::vector<double> factor_other;
  TokenId y_pos = 0;
  TokenId y_neg = 0;

  /// All factors laid out as one ascent vector over the vocabulary.
  std::vector<double> as_logit_vector() const;
};

/// Multiplier shared by the three DPO factors.
double dpo_prefactor(double u, double epsilon, double beta);

/// Requires y_pos != y_neg. MLE is ExMATE with beta = 0.
LogitFactorSet logit_factors_diff_token(Method method, const AnalysisPoint& point);

/// Coefficient of grad f in the update for a shared token. Throws DomainError
/// outside u, u + eps in (0, 1).
double same_token_coeff(Method method, double u, double epsilon, double beta);

/// The same expressions without the domain check (u > 0 and, for UL,
/// u + eps != 1 still required to avoid division by zero). Used to follow a
/// sign change that sits outside (0, 1).
double same_token_coeff_unchecked(Method method, double u, double epsilon, double beta);

/// Parameter gradient of the pair loss assembled from the per-sequence
/// structure: grad f / f = sum_t grad P(y_t) / P(y_t), with grad P(y_t)
/// taken from the softmax Jacobian row of y_t. ExMATE uses the exact
/// derivative of the geometric-mean penalty.
Gradient param_gradient_form(Method method, const ToyLM& model, const PreferencePair& pair,
                             double beta, const ToyLM* reference = nullptr);

/// Central differences (L(theta + h e_i) - L(theta - h e_i)) / 2h for every
/// parameter.
Gradient finite_difference_gradient(const std::function<double(const ToyLM&)>& loss,
                                    const ToyLM& model, double h = 1e-5);

/// |a - b| / max(1, |a|, |b|).
double relative_error(double a, double b);

struct GradReport {
  std::string method;
  std::string check;
  std::size_t trials = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::string worst_location;
  double tolerance = 0.0;
  bool pass = false;

  /// Folds one comparison into the maxima; pass is recomputed.
  void record(double engine, double reference, const std::string& location);
  void merge(const GradReport& other);
  std::string to_json() const;
};

/// Random one-step pairs with a shared context and a unit reference,
/// alternating different and identical response tokens. Compares the
/// engine's logit gradient (the b2 block) with the closed forms.
GradReport verify_exactness_regime(Method method, double beta, std::size_t trials,
                                   std::uint64_t seed, double tolerance = 1e-10);

/// Engine gradient against central differences on random instances
/// (|V| <= 16, d, d_h <= 8, T <= 5, distinct contexts, random frozen
/// reference for DPO).
GradReport verify_against_finite_differences(Method method, double beta, std::size_t trials,
                                             std::uint64_t seed, double tolerance = 1e-6);

/// Engine gradient against param_gradient_form on the same kind of random
/// instances.
GradReport verify_param_form(Method method, double beta, std::size_t trials, std::uint64_t seed,
                             double tolerance = 1e-10);

/// Zero model except b2, so every context and prefix gives the same
/// distribution: probability `p` on `token`, the rest spread evenly.
ToyLM engineered_model(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                       TokenId token, double p);

}  // namespace rgpb
