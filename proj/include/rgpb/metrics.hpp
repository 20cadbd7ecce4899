#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rgpb/lm_core.hpp"

namespace rgpb {

enum class Norm { kL1, kL2, kInf };

struct MetricRecord {
  double perplexity = 1.0;
  double agility = 0.0;
  double mean_info_diff = 0.0;
  /// Mean gradient difference at t = 1, 2, ... over the pairs long enough to
  /// have that step (NaN when none are).
  std::vector<double> grad_diff_per_step;
  std::size_t n_pairs = 0;
};

/// exp of the token-pooled mean NLL of the positive responses.
double perplexity(const ToyLM& model, std::span<const PreferencePair> dataset);

/// Mean over pairs of P(y+|x+) - P(y-|x-).
double agility(const ToyLM& model, std::span<const PreferencePair> dataset);

/// P(y-|x-) - P(y+|x+), the signed epsilon.
double signed_information_difference(const ToyLM& model, const PreferencePair& pair);

/// |P(y+|x+) - P(y-|x-)|.
double information_difference(const ToyLM& model, const PreferencePair& pair);

/// || P(.|x+, y+_<t) - P(.|x-, y-_<t) ||_p for 1-based step t.
double gradient_difference(const ToyLM& model, const PreferencePair& pair, std::size_t t,
                           Norm norm = Norm::kL1);

double vector_norm(std::span<const double> v, Norm norm);

MetricRecord evaluate(const ToyLM& model, std::span<const PreferencePair> dataset,
                      std::size_t grad_diff_steps = 3, Norm norm = Norm::kL1);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> xs, std::span<const double> ys);

// Metrics CSV.
std::string metrics_csv_header();
std::string metrics_csv_row(std::size_t epoch, const MetricRecord& record);

}  // namespace rgpb
