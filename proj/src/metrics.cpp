#include "rgpb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "rgpb/io.hpp"

namespace rgpb {

namespace {

void require_nonempty(std::span<const PreferencePair> dataset, const char* what) {
  if (dataset.empty()) throw std::invalid_argument(std::string(what) + ": empty dataset");
}

double seq_prob(const ToyLM& model, const TokenSeq& x, const TokenSeq& y) {
  return std::exp(seq_logprob(model, x, y).total);
}

std::vector<double> ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double perplexity(const ToyLM& model, std::span<const PreferencePair> dataset) {
  require_nonempty(dataset, "perplexity");
  // Computed as V * exp(-mean(log p + log V)) so a uniform model gives
  // exactly V: each shifted term is then exactly zero.
  const double vocab = static_cast<double>(model.vocab_size());
  const double log_vocab = std::log(vocab);
  double shifted = 0.0;
  std::size_t tokens = 0;
  for (const PreferencePair& pair : dataset) {
    for (double lp : seq_logprob(model, pair.x_pos, pair.y_pos).steps) shifted += lp + log_vocab;
    tokens += pair.y_pos.size();
  }
  return vocab * std::exp(-shifted / static_cast<double>(tokens));
}

double agility(const ToyLM& model, std::span<const PreferencePair> dataset) {
  require_nonempty(dataset, "agility");
  double total = 0.0;
  for (const PreferencePair& pair : dataset) total -= signed_information_difference(model, pair);
  return total / static_cast<double>(dataset.size());
}

double signed_information_difference(const ToyLM& model, const PreferencePair& pair) {
  return seq_prob(model, pair.x_neg, pair.y_neg) - seq_prob(model, pair.x_pos, pair.y_pos);
}

double information_difference(const ToyLM& model, const PreferencePair& pair) {
  return std::abs(signed_information_difference(model, pair));
}

double vector_norm(std::span<const double> v, Norm norm) {
  double acc = 0.0;
  switch (norm) {
    case Norm::kL1:
      for (double x : v) acc += std::abs(x);
      return acc;
    case Norm::kL2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc);
    case Norm::kInf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
  }
  return acc;
}

double gradient_difference(const ToyLM& model, const PreferencePair& pair, std::size_t t, Norm norm) {
  if (t == 0 || t > pair.y_pos.size() || t > pair.y_neg.size()) {
    throw std::out_of_range("gradient_difference: step " + std::to_string(t) + " outside both responses");
  }
  const TokenSeq prefix_pos(std::vector<TokenId>(pair.y_pos.ids.begin(), pair.y_pos.ids.begin() + (t - 1)));
  const TokenSeq prefix_neg(std::vector<TokenId>(pair.y_neg.ids.begin(), pair.y_neg.ids.begin() + (t - 1)));
  const StepDistribution pos = forward_step(model, pair.x_pos, prefix_pos);
  const StepDistribution neg = forward_step(model, pair.x_neg, prefix_neg);
  std::vector<double> diff(pos.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = pos.probs[i] - neg.probs[i];
  return vector_norm(diff, norm);
}

MetricRecord evaluate(const ToyLM& model, std::span<const PreferencePair> dataset,
                      std::size_t grad_diff_steps, Norm norm) {
  require_nonempty(dataset, "evaluate");
  MetricRecord rec;
  rec.n_pairs = dataset.size();
  rec.perplexity = perplexity(model, dataset);

  double agility_sum = 0.0;
  double info_sum = 0.0;
  for (const PreferencePair& pair : dataset) {
    const double eps = signed_information_difference(model, pair);
    agility_sum -= eps;
    info_sum += std::abs(eps);
  }
  rec.agility = agility_sum / static_cast<double>(dataset.size());
  rec.mean_info_diff = info_sum / static_cast<double>(dataset.size());

  for (std::size_t t = 1; t <= grad_diff_steps; ++t) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const PreferencePair& pair : dataset) {
      if (t > pair.y_pos.size() || t > pair.y_neg.size()) continue;
      sum += gradient_difference(model, pair, t, norm);
      ++count;
    }
    rec.grad_diff_per_step.push_back(count ? sum / static_cast<double>(count)
                                           : std::numeric_limits<double>::quiet_NaN());
  }
  return rec;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length series of at least 2 points");
  }
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string metrics_csv_header() {
  return "epoch,perplexity,agility,info_diff,grad_diff_t1,grad_diff_t2,grad_diff_t3,n_pairs\n";
}

std::string metrics_csv_row(std::size_t epoch, const MetricRecord& record) {
  std::string row = std::to_string(epoch) + "," + format_double(record.perplexity) + "," +
                    format_double(record.agility) + "," + format_double(record.mean_info_diff);
  for (std::size_t t = 0; t < 3; ++t) {
    const double v = t < record.grad_diff_per_step.size() ? record.grad_diff_per_step[t]
                                                          : std::numeric_limits<double>::quiet_NaN();
    row += "," + format_double(v);
  }
  row += "," + std::to_string(record.n_pairs) + "\n";
  return row;
}

}  // namespace rgpb
