#include "rgpb/lm_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "rgpb/errors.hpp"

namespace rgpb {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) {
    throw std::invalid_argument("vocab needs at least 2 tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw std::invalid_argument("duplicate vocab token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::synthetic(std::size_t size) {
  std::vector<std::string> tokens;
  tokens.reserve(size);
  for (std::size_t i = 0; i < size; ++i) tokens.push_back("t" + std::to_string(i));
  return Vocab(std::move(tokens));
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void TokenSeq::validate(std::size_t vocab_size, std::string_view what) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab_size) {
      throw std::invalid_argument(std::string(what) + ": token id " + std::to_string(ids[i]) +
                                  " at position " + std::to_string(i) + " is outside vocab of size " +
                                  std::to_string(vocab_size));
    }
  }
}

void PreferencePair::validate(std::size_t vocab_size) const {
  if (y_pos.empty()) throw std::invalid_argument("y_pos is empty");
  if (y_neg.empty()) throw std::invalid_argument("y_neg is empty");
  x_pos.validate(vocab_size, "x_pos");
  y_pos.validate(vocab_size, "y_pos");
  x_neg.validate(vocab_size, "x_neg");
  y_neg.validate(vocab_size, "y_neg");
}

std::size_t ParameterBlocks::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : blocks()) n += m->size();
  return n;
}

bool ParameterBlocks::same_shapes(const ParameterBlocks& other) const {
  auto mine = blocks();
  auto theirs = other.blocks();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!mine[i]->same_shape(*theirs[i])) return false;
  }
  return true;
}

bool ParameterBlocks::all_finite() const {
  for (const Matrix* m : blocks()) {
    for (double v : m->values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ToyLM::ToyLM(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim)
    : vocab_size_(vocab_size), embed_dim_(embed_dim), hidden_dim_(hidden_dim) {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (embed_dim == 0 || hidden_dim == 0) throw std::invalid_argument("dimensions must be positive");
  embed = Matrix(vocab_size + 1, embed_dim);
  w1 = Matrix(hidden_dim, 2 * embed_dim);
  b1 = Matrix(hidden_dim, 1);
  w2 = Matrix(vocab_size, hidden_dim);
  b2 = Matrix(vocab_size, 1);
}

ToyLM ToyLM::random(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                    double scale, Rng& rng) {
  ToyLM model(vocab_size, embed_dim, hidden_dim);
  std::normal_distribution<double> normal(0.0, scale);
  for (Matrix* m : model.blocks()) {
    for (double& v : m->values()) v = normal(rng);
  }
  return model;
}

void ToyLM::check_state() const {
  const bool shapes_ok = embed.rows() == vocab_size_ + 1 && embed.cols() == embed_dim_ &&
                         w1.rows() == hidden_dim_ && w1.cols() == 2 * embed_dim_ &&
                         b1.rows() == hidden_dim_ && b1.cols() == 1 &&
                         w2.rows() == vocab_size_ && w2.cols() == hidden_dim_ &&
                         b2.rows() == vocab_size_ && b2.cols() == 1;
  if (!shapes_ok) throw StateError("model parameter shapes are inconsistent");
  if (!all_finite()) throw StateError("model has non-finite parameters");
}

std::uint64_t ToyLM::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Matrix* m : blocks()) {
    for (double v : m->values()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Gradient::Gradient(const ToyLM& model) {
  auto src = model.blocks();
  auto dst = blocks();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = Matrix(src[i]->rows(), src[i]->cols());
}

void Gradient::scale(double factor) {
  for (Matrix* m : blocks()) {
    for (double& v : m->values()) v *= factor;
  }
}

void Gradient::add(const Gradient& other, double factor) {
  if (!same_shapes(other)) throw std::invalid_argument("gradient shapes differ");
  auto dst = blocks();
  auto src = other.blocks();
  for (std::size_t b = 0; b < dst.size(); ++b) {
    auto out = dst[b]->values();
    auto in = src[b]->values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += factor * in[i];
  }
}

double Gradient::max_abs() const {
  double m = 0.0;
  for (const Matrix* block : blocks()) {
    for (double v : block->values()) m = std::max(m, std::abs(v));
  }
  return m;
}

StepDistribution StepDistribution::from_logits(std::vector<double> logits) {
  StepDistribution dist;
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - zmax);
  const double lse = zmax + std::log(sum);
  dist.log_probs.resize(logits.size());
  dist.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    dist.log_probs[i] = logits[i] - lse;
    dist.probs[i] = std::exp(logits[i] - zmax) / sum;
  }
  dist.logits = std::move(logits);
  return dist;
}

std::vector<double> pool_context(const ToyLM& model, const TokenSeq& x) {
  const std::size_t d = model.embed_dim();
  std::vector<double> ctx(d, 0.0);
  if (x.empty()) return ctx;
  for (TokenId id : x.ids) {
    auto row = model.embed.row(id);
    for (std::size_t k = 0; k < d; ++k) ctx[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(x.size());
  for (double& v : ctx) v *= inv;
  return ctx;
}

StepTrace trace_step(const ToyLM& model, std::span<const double> context, TokenId last_row) {
  const std::size_t d = model.embed_dim();
  const std::size_t dh = model.hidden_dim();
  const std::size_t nv = model.vocab_size();

  StepTrace trace;
  trace.last_row = last_row;
  trace.input.resize(2 * d);
  std::copy(context.begin(), context.end(), trace.input.begin());
  auto last = model.embed.row(last_row);
  std::copy(last.begin(), last.end(), trace.input.begin() + static_cast<std::ptrdiff_t>(d));

  trace.hidden.resize(dh);
  for (std::size_t j = 0; j < dh; ++j) {
    double a = model.b1[j];
    auto w = model.w1.row(j);
    for (std::size_t k = 0; k < 2 * d; ++k) a += w[k] * trace.input[k];
    trace.hidden[j] = std::tanh(a);
  }

  std::vector<double> logits(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    double z = model.b2[v];
    auto w = model.w2.row(v);
    for (std::size_t j = 0; j < dh; ++j) z += w[j] * trace.hidden[j];
    logits[v] = z;
  }
  trace.dist = StepDistribution::from_logits(std::move(logits));
  return trace;
}

std::vector<StepTrace> trace_sequence(const ToyLM& model, const TokenSeq& x, const TokenSeq& y) {
  const std::vector<double> ctx = pool_context(model, x);
  std::vector<StepTrace> traces;
  traces.reserve(y.size());
  TokenId last = model.bos();
  for (std::size_t t = 0; t < y.size(); ++t) {
    traces.push_back(trace_step(model, ctx, last));
    last = y[t];
  }
  return traces;
}

void backprop_step(const ToyLM& model, const TokenSeq& x, const StepTrace& trace,
                   std::span<const double> dlogits, Gradient& grad) {
  const std::size_t d = model.embed_dim();
  const std::size_t dh = model.hidden_dim();
  const std::size_t nv = model.vocab_size();

  std::vector<double> dhidden(dh, 0.0);
  for (std::size_t v = 0; v < nv; ++v) {
    const double g = dlogits[v];
    if (g == 0.0) continue;
    grad.b2[v] += g;
    auto gw = grad.w2.row(v);
    auto w = model.w2.row(v);
    for (std::size_t j = 0; j < dh; ++j) {
      gw[j] += g * trace.hidden[j];
      dhidden[j] += g * w[j];
    }
  }

  std::vector<double> dinput(2 * d, 0.0);
  for (std::size_t j = 0; j < dh; ++j) {
    const double h = trace.hidden[j];
    const double da = dhidden[j] * (1.0 - h * h);
    if (da == 0.0) continue;
    grad.b1[j] += da;
    auto gw = grad.w1.row(j);
    auto w = model.w1.row(j);
    for (std::size_t k = 0; k < 2 * d; ++k) {
      gw[k] += da * trace.input[k];
      dinput[k] += da * w[k];
    }
  }

  if (!x.empty()) {
    const double inv = 1.0 / static_cast<double>(x.size());
    for (TokenId id : x.ids) {
      auto ge = grad.embed.row(id);
      for (std::size_t k = 0; k < d; ++k) ge[k] += dinput[k] * inv;
    }
  }
  auto ge = grad.embed.row(trace.last_row);
  for (std::size_t k = 0; k < d; ++k) ge[k] += dinput[d + k];
}

StepDistribution forward_step(const ToyLM& model, const TokenSeq& x, const TokenSeq& y_prefix) {
  x.validate(model.vocab_size(), "x");
  y_prefix.validate(model.vocab_size(), "y_prefix");
  model.check_state();
  const std::vector<double> ctx = pool_context(model, x);
  const TokenId last = y_prefix.empty() ? model.bos() : y_prefix.ids.back();
  return trace_step(model, ctx, last).dist;
}

SeqLogProb seq_logprob(const ToyLM& model, const TokenSeq& x, const TokenSeq& y) {
  if (y.empty()) throw std::invalid_argument("seq_logprob: y is empty");
  x.validate(model.vocab_size(), "x");
  y.validate(model.vocab_size(), "y");
  model.check_state();
  SeqLogProb out;
  out.steps.reserve(y.size());
  const auto traces = trace_sequence(model, x, y);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double lp = traces[t].dist.log_probs[y[t]];
    out.steps.push_back(lp);
    out.total += lp;
  }
  return out;
}

Matrix softmax_jacobian(const StepDistribution& dist) {
  const std::size_t n = dist.size();
  Matrix jac(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double pj = dist.probs[j];
    for (std::size_t i = 0; i < n; ++i) {
      jac(j, i) = (i == j) ? pj * (1.0 - pj) : -pj * dist.probs[i];
    }
  }
  return jac;
}

}  // namespace rgpb
