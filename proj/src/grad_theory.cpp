#include "rgpb/grad_theory.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "rgpb/errors.hpp"
#include "rgpb/io.hpp"
#include "rgpb/loss_gradient.hpp"
#include "rgpb/rng.hpp"

namespace rgpb {

namespace {

bool in_open_unit(double v) { return v > 0.0 && v < 1.0; }

void require_open_unit(double u, double epsilon) {
  if (!in_open_unit(u)) throw DomainError("u = " + format_double(u) + " outside (0, 1)");
  if (!in_open_unit(u + epsilon)) {
    throw DomainError("u + epsilon = " + format_double(u + epsilon) + " outside (0, 1)");
  }
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// sum_t w_t * grad P(y_t | x, y_<t), where w_t = weight(P(y_t)).
template <typename Weight>
Gradient weighted_step_gradients(const ToyLM& model, const TokenSeq& x, const TokenSeq& y, Weight weight) {
  Gradient out(model);
  const auto traces = trace_sequence(model, x, y);
  std::vector<double> dlogits(model.vocab_size());
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const StepDistribution& dist = traces[t].dist;
    const double p = dist.probs[y[t]];
    const double w = weight(p, t);
    const Matrix jac = softmax_jacobian(dist);
    for (std::size_t i = 0; i < dlogits.size(); ++i) dlogits[i] = w * jac(y[t], i);
    backprop_step(model, x, traces[t], dlogits, out);
  }
  return out;
}

// grad f / f = sum_t grad P(y_t) / P(y_t).
Gradient log_seq_gradient(const ToyLM& model, const TokenSeq& x, const TokenSeq& y) {
  return weighted_step_gradients(model, x, y, [](double p, std::size_t) { return 1.0 / p; });
}

std::string method_name(Method m) { return std::string(to_string(m)); }

struct Instance {
  ToyLM model;
  ToyLM reference;
  PreferencePair pair;
};

TokenSeq random_tokens(std::size_t len, std::size_t vocab, Rng& rng) {
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  TokenSeq s;
  s.ids.resize(len);
  for (auto& id : s.ids) id = tok(rng);
  return s;
}

Instance random_instance(Rng& rng) {
  std::uniform_int_distribution<std::size_t> vocab(3, 16), dim(1, 8), resp(1, 5), ctx(0, 5);
  const std::size_t v = vocab(rng);
  const std::size_t d = dim(rng);
  const std::size_t dh = dim(rng);
  Instance in;
  in.model = ToyLM::random(v, d, dh, 0.5, rng);
  in.reference = ToyLM::random(v, d, dh, 0.5, rng);
  in.pair.x_pos = random_tokens(ctx(rng), v, rng);
  in.pair.y_pos = random_tokens(resp(rng), v, rng);
  in.pair.x_neg = random_tokens(ctx(rng), v, rng);
  in.pair.y_neg = random_tokens(resp(rng), v, rng);
  return in;
}

LossSpec spec_for(Method method, double beta, RefPolicy policy) {
  LossSpec spec;
  spec.method = method;
  spec.beta = beta;
  spec.ref_policy = method == Method::kDpo ? policy : RefPolicy::kUnit;
  return spec;
}

}  // namespace

void AnalysisPoint::validate() const {
  if (!std::isfinite(beta) || beta < 0.0) throw std::invalid_argument("beta must be finite and >= 0");
  if (p_plus.size() != p_minus.size() || p_plus.size() < 2) {
    throw std::invalid_argument("p_plus and p_minus must have the same size >= 2");
  }
  for (std::size_t i = 0; i < p_plus.size(); ++i) {
    if (!(p_plus[i] >= 0.0 && p_plus[i] <= 1.0) || !(p_minus[i] >= 0.0 && p_minus[i] <= 1.0)) {
      throw std::invalid_argument("probability entry outside [0, 1] at token " + std::to_string(i));
    }
  }
  if (y_pos >= p_plus.size() || y_neg >= p_plus.size()) throw std::invalid_argument("token id outside vocab");
  require_open_unit(u, epsilon);
}

std::vector<double> LogitFactorSet::as_logit_vector() const {
  std::vector<double> out = factor_other;
  out[y_pos] = factor_ypos;
  out[y_neg] = factor_yneg;
  return out;
}

double dpo_prefactor(double u, double epsilon, double beta) {
  require_open_unit(u, epsilon);
  // beta * (u+eps)^beta / ((u+eps)^beta + u^beta) = beta * sigmoid(beta * log((u+eps)/u)),
  // evaluated in log space so tiny probabilities do not underflow.
  return beta * sigmoid(beta * (std::log(u + epsilon) - std::log(u)));
}

LogitFactorSet logit_factors_diff_token(Method method, const AnalysisPoint& point) {
  point.validate();
  if (point.y_pos == point.y_neg) {
    throw std::invalid_argument("logit_factors_diff_token: y+ and y- coincide; use same_token_coeff");
  }
  const auto& pp = point.p_plus;
  const auto& pm = point.p_minus;
  const TokenId yp = point.y_pos;
  const TokenId yn = point.y_neg;
  const double beta = method == Method::kMle ? 0.0 : point.beta;
  const double q = pm[yn];

  LogitFactorSet f;
  f.y_pos = yp;
  f.y_neg = yn;
  f.factor_other.assign(pp.size(), 0.0);
  auto each_other = [&](auto fn) {
    for (std::size_t z = 0; z < pp.size(); ++z) {
      if (z != yp && z != yn) f.factor_other[z] = fn(z);
    }
  };

  switch (method) {
    case Method::kDpo: {
      const double c = dpo_prefactor(point.u, point.epsilon, beta);
      f.factor_ypos = c * (1.0 - pp[yp] + pm[yp]);
      f.factor_yneg = c * (-pp[yn] - (1.0 - pm[yn]));
      each_other([&](std::size_t z) { return c * (-pp[z] + pm[z]); });
      break;
    }
    case Method::kUl: {
      if (!(q < 1.0)) throw DomainError("unlikelihood factors need P-(y-) < 1");
      const double r = beta * q / (1.0 - q);
      f.factor_ypos = 1.0 - pp[yp] + r * pm[yp];
      f.factor_yneg = -pp[yn] - beta * q;
      each_other([&](std::size_t z) { return -pp[z] + r * pm[z]; });
      break;
    }
    case Method::kMle:
    case Method::kExmate: {
      f.factor_ypos = 1.0 - pp[yp] + beta * q * pm[yp];
      f.factor_yneg = -pp[yn] - beta * q * (1.0 - q);
      each_other([&](std::size_t z) { return -pp[z] + beta * q * pm[z]; });
      break;
    }
  }
  return f;
}

double same_token_coeff_unchecked(Method method, double u, double epsilon, double beta) {
  if (!(u > 0.0)) throw DomainError("same_token_coeff: u must be positive");
  switch (method) {
    case Method::kDpo: {
      const double a = std::pow(u + epsilon, beta);
      const double b = std::pow(u, beta);
      return beta * std::pow(u + epsilon, beta - 1.0) * epsilon / ((a + b) * u);
    }
    case Method::kUl: {
      const double denom = u * (1.0 - u - epsilon);
      if (denom == 0.0) throw DomainError("same_token_coeff: unlikelihood needs u + epsilon != 1");
      return (1.0 - (1.0 + beta) * u - epsilon) / denom;
    }
    case Method::kMle:
      return 1.0 / u;
    case Method::kExmate:
      return 1.0 / u - beta;
  }
  return 0.0;
}

double same_token_coeff(Method method, double u, double epsilon, double beta) {
  require_open_unit(u, epsilon);
  if (!std::isfinite(beta) || beta < 0.0) throw std::invalid_argument("beta must be finite and >= 0");
  return same_token_coeff_unchecked(method, u, epsilon, beta);
}

Gradient param_gradient_form(Method method, const ToyLM& model, const PreferencePair& pair, double beta,
                             const ToyLM* reference) {
  model.check_state();
  pair.validate(model.vocab_size());
  const double tp = static_cast<double>(pair.y_pos.size());
  const double tn = static_cast<double>(pair.y_neg.size());

  Gradient grad = log_seq_gradient(model, pair.x_pos, pair.y_pos);
  if (method == Method::kMle) {
    grad.scale(-1.0 / tp);
    return grad;
  }

  switch (method) {
    case Method::kDpo: {
      const double lp_pos = seq_logprob(model, pair.x_pos, pair.y_pos).total;
      const double lp_neg = seq_logprob(model, pair.x_neg, pair.y_neg).total;
      double ref_pos = 0.0;
      double ref_neg = 0.0;
      if (reference != nullptr) {
        ref_pos = seq_logprob(*reference, pair.x_pos, pair.y_pos).total;
        ref_neg = seq_logprob(*reference, pair.x_neg, pair.y_neg).total;
      }
      // -beta sigma(beta log(f-/fref-) - beta log(f+/fref+)) (grad f+/f+ - grad f-/f-)
      const double s = sigmoid(beta * ((lp_neg - ref_neg) - (lp_pos - ref_pos)));
      grad.add(log_seq_gradient(model, pair.x_neg, pair.y_neg), -1.0);
      grad.scale(-beta * s);
      return grad;
    }
    case Method::kUl: {
      grad.scale(-1.0 / tp);
      const Gradient neg = weighted_step_gradients(model, pair.x_neg, pair.y_neg, [](double p, std::size_t t) {
        if (!(p < 1.0)) throw DomainError("unlikelihood undefined: P(y-_t) = 1", t);
        return 1.0 / (1.0 - p);
      });
      grad.add(neg, beta / tn);
      return grad;
    }
    case Method::kExmate: {
      grad.scale(-1.0 / tp);
      const double g = std::exp(seq_logprob(model, pair.x_neg, pair.y_neg).total / tn);
      grad.add(log_seq_gradient(model, pair.x_neg, pair.y_neg), beta * g / tn);
      return grad;
    }
    case Method::kMle:
      break;
  }
  return grad;
}

Gradient finite_difference_gradient(const std::function<double(const ToyLM&)>& loss, const ToyLM& model,
                                    double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  Gradient out(model);
  ToyLM probe = model;
  auto params = probe.blocks();
  auto grads = out.blocks();
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b]->values();
    auto g = grads[b]->values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = loss(probe);
      p[i] = saved - h;
      const double down = loss(probe);
      p[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
  }
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

void GradReport::record(double engine, double reference, const std::string& location) {
  const double abs_err = std::abs(engine - reference);
  const double rel_err = relative_error(engine, reference);
  max_abs_error = std::max(max_abs_error, abs_err);
  if (rel_err > max_rel_error || worst_location.empty()) {
    max_rel_error = std::max(max_rel_error, rel_err);
    worst_location = location;
  }
  pass = max_rel_error < tolerance;
}

void GradReport::merge(const GradReport& other) {
  trials += other.trials;
  max_abs_error = std::max(max_abs_error, other.max_abs_error);
  if (other.max_rel_error > max_rel_error) {
    max_rel_error = other.max_rel_error;
    worst_location = other.worst_location;
  }
  pass = max_rel_error < tolerance;
}

std::string GradReport::to_json() const {
  nlohmann::json j{{"method", method},
                   {"check", check},
                   {"trials", trials},
                   {"max_abs_error", max_abs_error},
                   {"max_rel_error", max_rel_error},
                   {"worst_location", worst_location},
                   {"tolerance", tolerance},
                   {"pass", pass}};
  return j.dump();
}

GradReport verify_exactness_regime(Method method, double beta, std::size_t trials, std::uint64_t seed,
                                   double tolerance) {
  if (trials == 0) throw std::invalid_argument("verify_exactness_regime: trials must be positive");
  GradReport report;
  report.method = method_name(method);
  report.check = "exactness_regime";
  report.trials = trials;
  report.tolerance = tolerance;
  report.pass = true;

  Rng rng(sub_seed(seed, "exactness"));
  std::uniform_int_distribution<std::size_t> vocab(3, 16), dim(1, 8), ctx(0, 4);
  const LossSpec spec = spec_for(method, beta, RefPolicy::kUnit);

  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t v = vocab(rng);
    const std::size_t d = dim(rng);
    const std::size_t dh = dim(rng);
    const ToyLM model = ToyLM::random(v, d, dh, 1.0, rng);
    const TokenSeq x = random_tokens(ctx(rng), v, rng);
    std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(v - 1));
    const TokenId y_pos = tok(rng);
    TokenId y_neg = y_pos;
    const bool same_token = trial % 2 == 1;
    if (!same_token) {
      std::uniform_int_distribution<TokenId> other(0, static_cast<TokenId>(v - 2));
      y_neg = other(rng);
      if (y_neg >= y_pos) ++y_neg;
    }
    const PreferencePair pair{x, TokenSeq{y_pos}, x, TokenSeq{y_neg}};

    // The logit gradient is exactly the b2 block.
    const Gradient engine = loss_gradient(model, spec, pair);
    const StepDistribution dist = forward_step(model, x, TokenSeq{});
    const double u = dist.probs[y_pos];
    const double f_neg = dist.probs[y_neg];

    std::vector<double> closed(v);
    if (same_token) {
      const double c = same_token_coeff(method, u, 0.0, beta);
      for (std::size_t z = 0; z < v; ++z) closed[z] = -c * u * dist.probs[z];
      closed[y_pos] += c * u;
    } else {
      AnalysisPoint point{u, f_neg - u, beta, dist.probs, dist.probs, y_pos, y_neg};
      closed = logit_factors_diff_token(method, point).as_logit_vector();
    }
    for (std::size_t z = 0; z < v; ++z) {
      report.record(-engine.b2[z], closed[z],
                    "trial " + std::to_string(trial) + (same_token ? " same-token" : " diff-token") +
                        " logit " + std::to_string(z));
    }
  }
  return report;
}

GradReport verify_against_finite_differences(Method method, double beta, std::size_t trials,
                                             std::uint64_t seed, double tolerance) {
  if (trials == 0) throw std::invalid_argument("verify_against_finite_differences: trials must be positive");
  GradReport report;
  report.method = method_name(method);
  report.check = "finite_differences";
  report.trials = trials;
  report.tolerance = tolerance;
  report.pass = true;

  Rng rng(sub_seed(seed, "finite-differences"));
  const LossSpec spec = spec_for(method, beta, RefPolicy::kFrozenCopy);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const Instance in = random_instance(rng);
    const ToyLM* ref = spec.uses_reference() ? &in.reference : nullptr;
    const Gradient engine = loss_gradient(in.model, spec, in.pair, ref);
    const Gradient fd = finite_difference_gradient(
        [&](const ToyLM& m) { return pair_loss(m, spec, in.pair, ref); }, in.model, 1e-5);
    const auto eb = engine.blocks();
    const auto fb = fd.blocks();
    for (std::size_t b = 0; b < eb.size(); ++b) {
      const auto ev = eb[b]->values();
      const auto fv = fb[b]->values();
      for (std::size_t i = 0; i < ev.size(); ++i) {
        report.record(ev[i], fv[i],
                      "trial " + std::to_string(trial) + " " + std::string(ParameterBlocks::kBlockNames[b]) +
                          "[" + std::to_string(i) + "]");
      }
    }
  }
  return report;
}

GradReport verify_param_form(Method method, double beta, std::size_t trials, std::uint64_t seed,
                             double tolerance) {
  if (trials == 0) throw std::invalid_argument("verify_param_form: trials must be positive");
  GradReport report;
  report.method = method_name(method);
  report.check = "param_form";
  report.trials = trials;
  report.tolerance = tolerance;
  report.pass = true;

  Rng rng(sub_seed(seed, "param-form"));
  const LossSpec spec = spec_for(method, beta, RefPolicy::kFrozenCopy);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const Instance in = random_instance(rng);
    const ToyLM* ref = spec.uses_reference() ? &in.reference : nullptr;
    const Gradient engine = loss_gradient(in.model, spec, in.pair, ref);
    const Gradient form = param_gradient_form(method, in.model, in.pair, beta, ref);
    const auto eb = engine.blocks();
    const auto fb = form.blocks();
    for (std::size_t b = 0; b < eb.size(); ++b) {
      const auto ev = eb[b]->values();
      const auto fv = fb[b]->values();
      for (std::size_t i = 0; i < ev.size(); ++i) {
        report.record(ev[i], fv[i],
                      "trial " + std::to_string(trial) + " " + std::string(ParameterBlocks::kBlockNames[b]) +
                          "[" + std::to_string(i) + "]");
      }
    }
  }
  return report;
}

ToyLM engineered_model(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim, TokenId token,
                       double p) {
  if (!in_open_unit(p)) throw std::invalid_argument("engineered_model: p must lie in (0, 1)");
  if (token >= vocab_size) throw std::invalid_argument("engineered_model: token outside vocab");
  ToyLM model(vocab_size, embed_dim, hidden_dim);
  model.b2[token] = std::log(p * static_cast<double>(vocab_size - 1) / (1.0 - p));
  return model;
}

}  // namespace rgpb
