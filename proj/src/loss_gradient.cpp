#include "rgpb/loss_gradient.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace rgpb {

namespace {

// Adds `scale` times the gradient of one pair's loss into `grad`; returns the loss.
double accumulate_pair(const ToyLM& model, const LossSpec& spec, const PreferencePair& pair,
                       const ToyLM* reference, double scale, Gradient& grad) {
  pair.validate(model.vocab_size());
  const bool needs_negative = spec.method != Method::kMle;

  const auto pos_traces = trace_sequence(model, pair.x_pos, pair.y_pos);
  std::vector<double> pos_lp(pair.y_pos.size());
  for (std::size_t t = 0; t < pos_lp.size(); ++t) pos_lp[t] = pos_traces[t].dist.log_probs[pair.y_pos[t]];

  std::vector<StepTrace> neg_traces;
  std::vector<double> neg_lp;
  if (needs_negative) {
    neg_traces = trace_sequence(model, pair.x_neg, pair.y_neg);
    neg_lp.resize(pair.y_neg.size());
    for (std::size_t t = 0; t < neg_lp.size(); ++t) neg_lp[t] = neg_traces[t].dist.log_probs[pair.y_neg[t]];
  }

  double ref_pos = 0.0;
  double ref_neg = 0.0;
  if (spec.uses_reference()) {
    if (reference == nullptr) throw std::invalid_argument("frozen_copy DPO needs a reference model");
    ref_pos = seq_logprob(*reference, pair.x_pos, pair.y_pos).total;
    ref_neg = seq_logprob(*reference, pair.x_neg, pair.y_neg).total;
  }

  const LossTerms terms = loss_terms(spec, pos_lp, neg_lp, ref_pos, ref_neg);

  std::vector<double> dlogits(model.vocab_size());
  auto backprop = [&](const TokenSeq& x, const TokenSeq& y, const std::vector<StepTrace>& traces,
                      const std::vector<double>& weights) {
    for (std::size_t t = 0; t < traces.size(); ++t) {
      const double w = scale * weights[t];
      if (w == 0.0) continue;
      const auto& probs = traces[t].dist.probs;
      for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] = -w * probs[v];
      dlogits[y[t]] += w;
      backprop_step(model, x, traces[t], dlogits, grad);
    }
  };
  if (!needs_negative) {
    backprop(pair.x_pos, pair.y_pos, pos_traces, terms.d_pos);
    return terms.value;
  }
  // Leading steps where both sides condition on the same input and score the
  // same token have identical logit gradients, so their weights are summed
  // first. Opposite weights then cancel exactly instead of to rounding.
  std::size_t shared = 0;
  if (pair.x_pos == pair.x_neg) {
    const std::size_t n = std::min(pair.y_pos.size(), pair.y_neg.size());
    while (shared < n && pair.y_pos[shared] == pair.y_neg[shared]) ++shared;
  }
  std::vector<double> pos_w = terms.d_pos;
  std::vector<double> neg_w = terms.d_neg;
  for (std::size_t t = 0; t < shared; ++t) {
    pos_w[t] += neg_w[t];
    neg_w[t] = 0.0;
  }
  backprop(pair.x_pos, pair.y_pos, pos_traces, pos_w);
  backprop(pair.x_neg, pair.y_neg, neg_traces, neg_w);
  return terms.value;
}

}  // namespace

LossAndGradient loss_and_gradient(const ToyLM& model, const LossSpec& spec,
                                  const PreferencePair& pair, const ToyLM* reference) {
  model.check_state();
  LossAndGradient out{0.0, Gradient(model)};
  out.loss = accumulate_pair(model, spec, pair, reference, 1.0, out.gradient);
  return out;
}

Gradient loss_gradient(const ToyLM& model, const LossSpec& spec, const PreferencePair& pair,
                       const ToyLM* reference) {
  return loss_and_gradient(model, spec, pair, reference).gradient;
}

LossAndGradient batch_loss_and_gradient(const ToyLM& model, const LossSpec& spec,
                                        std::span<const PreferencePair> batch,
                                        const ToyLM* reference) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_and_gradient: empty batch");
  model.check_state();
  LossAndGradient out{0.0, Gradient(model)};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const PreferencePair& pair : batch) {
    out.loss += accumulate_pair(model, spec, pair, reference, scale, out.gradient);
  }
  out.loss *= scale;
  return out;
}

}  // namespace rgpb
