#pragma once

// Exact reverse-mode gradients of the losses through the toy model. Each step
// contributes dL/dlogits = (dL/dlog P(y_t)) * (onehot(y_t) - P), then the
// fixed graph is walked backwards by backprop_step.

#include <span>

#include "rgpb/lm_core.hpp"
#include "rgpb/losses.hpp"

namespace rgpb {

struct LossAndGradient {
  double loss = 0.0;
  Gradient gradient;
};

/// Throws DomainError (with the step) where the loss is undefined, e.g. UL
/// with P(y-_t) = 1.
LossAndGradient loss_and_gradient(const ToyLM& model, const LossSpec& spec,
                                  const PreferencePair& pair, const ToyLM* reference = nullptr);

Gradient loss_gradient(const ToyLM& model, const LossSpec& spec, const PreferencePair& pair,
                       const ToyLM* reference = nullptr);

/// Mean loss and gradient over the batch, accumulated in index order.
LossAndGradient batch_loss_and_gradient(const ToyLM& model, const LossSpec& spec,
                                        std::span<const PreferencePair> batch,
                                        const ToyLM* reference = nullptr);

}  // namespace rgpb
