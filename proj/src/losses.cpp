#include "rgpb/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "rgpb/errors.hpp"
#include "rgpb/io.hpp"

namespace rgpb {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

double mean(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// -log sigmoid(s) without overflow.
double neg_log_sigmoid(double s) {
  return s >= 0.0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
}

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

void require_nonempty(std::span<const double> xs, const char* what) {
  if (xs.empty()) throw std::invalid_argument(std::string(what) + " has no steps");
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kMle: return "mle";
    case Method::kDpo: return "dpo";
    case Method::kUl: return "ul";
    case Method::kExmate: return "exmate";
  }
  return "?";
}

std::string_view to_string(RefPolicy policy) {
  return policy == RefPolicy::kUnit ? "unit" : "frozen_copy";
}

std::optional<Method> parse_method(std::string_view text) {
  const std::string t = lower(text);
  if (t == "mle" || t == "sft") return Method::kMle;
  if (t == "dpo") return Method::kDpo;
  if (t == "ul" || t == "unlikelihood") return Method::kUl;
  if (t == "exmate") return Method::kExmate;
  return std::nullopt;
}

std::optional<RefPolicy> parse_ref_policy(std::string_view text) {
  const std::string t = lower(text);
  if (t == "unit") return RefPolicy::kUnit;
  if (t == "frozen_copy" || t == "frozen") return RefPolicy::kFrozenCopy;
  return std::nullopt;
}

std::vector<std::string> LossSpec::validate() const {
  if (!std::isfinite(beta) || beta < 0.0) {
    throw std::invalid_argument("beta must be finite and non-negative, got " + format_double(beta));
  }
  std::vector<std::string> warnings;
  if (method != Method::kDpo && ref_policy != RefPolicy::kUnit) {
    warnings.push_back("ref_policy=" + std::string(to_string(ref_policy)) + " is ignored by " +
                       std::string(to_string(method)));
  }
  return warnings;
}

std::string LossSpec::label() const {
  std::string out(to_string(method));
  if (method != Method::kMle) out += "(beta=" + format_double(beta) + ")";
  return out;
}

void Schedule::validate() const {
  if (stages.empty()) throw std::invalid_argument("schedule has no stages");
  for (const Stage& s : stages) {
    if (s.epochs == 0) throw std::invalid_argument("schedule stage with zero epochs");
    s.loss.validate();
  }
}

std::size_t Schedule::total_epochs() const {
  std::size_t n = 0;
  for (const Stage& s : stages) n += s.epochs;
  return n;
}

std::size_t Schedule::stage_index(std::size_t epoch) const {
  std::size_t start = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (epoch < start + stages[i].epochs) return i;
    start += stages[i].epochs;
  }
  throw std::out_of_range("epoch " + std::to_string(epoch) + " is past the schedule end (" +
                          std::to_string(start) + " epochs)");
}

std::string Schedule::label() const {
  std::string out;
  for (const Stage& s : stages) {
    if (!out.empty()) out += "+";
    out += std::string(to_string(s.loss.method)) + ":" + std::to_string(s.epochs);
  }
  return out;
}

const LossSpec& composite_loss(const Schedule& schedule, std::size_t epoch) {
  return schedule.stages[schedule.stage_index(epoch)].loss;
}

LossTerms mle_terms(std::span<const double> pos_logprobs) {
  require_nonempty(pos_logprobs, "y_pos");
  LossTerms terms;
  const double inv_t = 1.0 / static_cast<double>(pos_logprobs.size());
  terms.value = -mean(pos_logprobs);
  terms.d_pos.assign(pos_logprobs.size(), -inv_t);
  return terms;
}

LossTerms dpo_terms(std::span<const double> pos_logprobs, std::span<const double> neg_logprobs,
                    double ref_pos, double ref_neg, double beta) {
  require_nonempty(pos_logprobs, "y_pos");
  require_nonempty(neg_logprobs, "y_neg");
  double pos = 0.0;
  double neg = 0.0;
  for (double lp : pos_logprobs) pos += lp;
  for (double lp : neg_logprobs) neg += lp;
  const double margin = beta * ((pos - ref_pos) - (neg - ref_neg));

  LossTerms terms;
  terms.value = neg_log_sigmoid(margin);
  // d/dmargin of -log sigmoid(margin) is -sigmoid(-margin).
  const double weight = beta * sigmoid(-margin);
  terms.d_pos.assign(pos_logprobs.size(), -weight);
  terms.d_neg.assign(neg_logprobs.size(), weight);
  return terms;
}

LossTerms ul_terms(std::span<const double> pos_logprobs, std::span<const double> neg_logprobs,
                   double beta) {
  LossTerms terms = mle_terms(pos_logprobs);
  require_nonempty(neg_logprobs, "y_neg");
  const double inv_t = 1.0 / static_cast<double>(neg_logprobs.size());
  double penalty = 0.0;
  terms.d_neg.resize(neg_logprobs.size());
  for (std::size_t t = 0; t < neg_logprobs.size(); ++t) {
    const double lp = neg_logprobs[t];
    const double p = std::exp(lp);
    if (!(p < 1.0)) {
      throw DomainError("unlikelihood undefined: P(y-_t) = 1 at step " + std::to_string(t), t);
    }
    const double complement = -std::expm1(lp);  // 1 - p
    penalty += std::log(complement);
    terms.d_neg[t] = beta * inv_t * p / complement;
  }
  terms.value -= beta * inv_t * penalty;
  return terms;
}

double exmate_penalty(std::span<const double> neg_logprobs, double beta) {
  require_nonempty(neg_logprobs, "y_neg");
  return beta * std::exp(mean(neg_logprobs));
}

LossTerms exmate_terms(std::span<const double> pos_logprobs, std::span<const double> neg_logprobs,
                       double beta) {
  LossTerms terms = mle_terms(pos_logprobs);
  const double penalty = exmate_penalty(neg_logprobs, beta);
  terms.value += penalty;
  const double inv_t = 1.0 / static_cast<double>(neg_logprobs.size());
  terms.d_neg.assign(neg_logprobs.size(), penalty * inv_t);
  return terms;
}

LossTerms loss_terms(const LossSpec& spec, std::span<const double> pos_logprobs,
                     std::span<const double> neg_logprobs, double ref_pos, double ref_neg) {
  switch (spec.method) {
    case Method::kMle: return mle_terms(pos_logprobs);
    case Method::kDpo: return dpo_terms(pos_logprobs, neg_logprobs, ref_pos, ref_neg, spec.beta);
    case Method::kUl: return ul_terms(pos_logprobs, neg_logprobs, spec.beta);
    case Method::kExmate: return exmate_terms(pos_logprobs, neg_logprobs, spec.beta);
  }
  throw std::logic_error("unknown method");
}

double single_step_loss(Method method, double p_pos, double p_neg, double beta) {
  if (!(p_pos > 0.0 && p_pos <= 1.0) || !(p_neg > 0.0 && p_neg <= 1.0)) {
    throw DomainError("single_step_loss: probabilities must lie in (0, 1]", 0);
  }
  const double pos[] = {std::log(p_pos)};
  const double neg[] = {std::log(p_neg)};
  return loss_terms(LossSpec{method, beta, RefPolicy::kUnit}, pos, neg).value;
}

// ---------------------------------------------------------------------------

double mle_loss(const ToyLM& model, std::span<const PreferencePair> batch) {
  if (batch.empty()) throw std::invalid_argument("mle_loss: empty batch");
  double total = 0.0;
  for (const PreferencePair& pair : batch) {
    const SeqLogProb lp = seq_logprob(model, pair.x_pos, pair.y_pos);
    total += mle_terms(lp.steps).value;
  }
  return total / static_cast<double>(batch.size());
}

double dpo_loss(const ToyLM& model, const ToyLM* reference, const PreferencePair& pair, double beta) {
  const LossSpec spec{Method::kDpo, beta, reference ? RefPolicy::kFrozenCopy : RefPolicy::kUnit};
  return pair_loss(model, spec, pair, reference);
}

double ul_loss(const ToyLM& model, const PreferencePair& pair, double beta) {
  return pair_loss(model, LossSpec{Method::kUl, beta, RefPolicy::kUnit}, pair);
}

double exmate_loss(const ToyLM& model, const PreferencePair& pair, double beta) {
  return pair_loss(model, LossSpec{Method::kExmate, beta, RefPolicy::kUnit}, pair);
}

double pair_loss(const ToyLM& model, const LossSpec& spec, const PreferencePair& pair,
                 const ToyLM* reference) {
  const SeqLogProb pos = seq_logprob(model, pair.x_pos, pair.y_pos);
  if (spec.method == Method::kMle) return mle_terms(pos.steps).value;
  const SeqLogProb neg = seq_logprob(model, pair.x_neg, pair.y_neg);
  double ref_pos = 0.0;
  double ref_neg = 0.0;
  if (spec.uses_reference()) {
    if (reference == nullptr) throw std::invalid_argument("frozen_copy DPO needs a reference model");
    ref_pos = seq_logprob(*reference, pair.x_pos, pair.y_pos).total;
    ref_neg = seq_logprob(*reference, pair.x_neg, pair.y_neg).total;
  }
  return loss_terms(spec, pos.steps, neg.steps, ref_pos, ref_neg).value;
}

double batch_loss(const ToyLM& model, const LossSpec& spec, std::span<const PreferencePair> batch,
                  const ToyLM* reference) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  for (const PreferencePair& pair : batch) total += pair_loss(model, spec, pair, reference);
  return total / static_cast<double>(batch.size());
}

}  // namespace rgpb
