#include <gtest/gtest.h>

#include <cmath>

#include "rgpb/losses.hpp"
#include "rgpb/metrics.hpp"
#include "test_support.hpp"

using namespace rgpb;
using namespace rgpb::testing;

namespace {

ToyLM model_with_probs(const std::vector<double>& p) {
  ToyLM m(p.size(), 1, 1);
  for (std::size_t i = 0; i < p.size(); ++i) m.b2(i, 0) = std::log(p[i]);
  return m;
}

}  // namespace

TEST(Perplexity, UniformModelIsVocabSizeExactly) {
  for (std::size_t V : {2u, 8u, 13u}) {
    const ToyLM m(V, 3, 3);
    Rng rng(V);
    std::vector<PreferencePair> data;
    for (int i = 0; i < 10; ++i) data.push_back(random_pair(V, rng));
    EXPECT_EQ(perplexity(m, data), static_cast<double>(V));
  }
}

TEST(Perplexity, CertainModelIsOne) {
  ToyLM m(4, 1, 1);
  m.b2(2, 0) = 800.0;
  const std::vector<PreferencePair> data{{{0}, {2, 2}, {1}, {3}}};
  EXPECT_EQ(perplexity(m, data), 1.0);
}

TEST(Perplexity, TokenPooledOracle) {
  Rng rng(2);
  const ToyLM m = ToyLM::random(7, 3, 4, 1.0, rng);
  std::vector<PreferencePair> data;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (int i = 0; i < 6; ++i) {
    data.push_back(random_pair(7, rng));
    nll -= oracle_seq_logprob(m, data.back().x_pos, data.back().y_pos);
    tokens += data.back().y_pos.size();
  }
  EXPECT_NEAR(perplexity(m, data), std::exp(nll / static_cast<double>(tokens)), 1e-12);
}

TEST(Perplexity, EqualsExpMleWhenLengthsMatch) {
  Rng rng(3);
  const ToyLM m = ToyLM::random(7, 3, 4, 1.0, rng);
  std::vector<PreferencePair> data;
  for (int i = 0; i < 5; ++i) {
    data.push_back({random_tokens(2, 7, rng), random_tokens(3, 7, rng), random_tokens(2, 7, rng),
                    random_tokens(3, 7, rng)});
  }
  EXPECT_NEAR(perplexity(m, data), std::exp(mle_loss(m, data)), 1e-12);
}

TEST(Perplexity, AtLeastOne) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const ToyLM m = ToyLM::random(6, 2, 3, 3.0, rng);
    const std::vector<PreferencePair> data{random_pair(6, rng)};
    EXPECT_GE(perplexity(m, data), 1.0);
  }
}

TEST(Agility, IdenticalPairIsZeroExactly) {
  Rng rng(5);
  const ToyLM m = ToyLM::random(6, 3, 3, 1.0, rng);
  const std::vector<PreferencePair> data{{{1, 2}, {3}, {1, 2}, {3}}, {{}, {4, 5}, {}, {4, 5}}};
  EXPECT_EQ(agility(m, data), 0.0);
  EXPECT_EQ(information_difference(m, data[0]), 0.0);
}

TEST(Agility, EngineeredSingleStep) {
  const ToyLM m = model_with_probs({0.6, 0.1, 0.3});
  const std::vector<PreferencePair> data{{{}, {0}, {}, {1}}};
  EXPECT_NEAR(agility(m, data), 0.5, 1e-15);
  EXPECT_NEAR(information_difference(m, data[0]), 0.5, 1e-15);
  EXPECT_NEAR(signed_information_difference(m, data[0]), -0.5, 1e-15);
}

TEST(Agility, NegatedMeanInformationDifferenceWhenNegativesDominate) {
  const ToyLM m = model_with_probs({0.1, 0.5, 0.2, 0.2});
  const std::vector<PreferencePair> data{{{}, {0}, {}, {1}}, {{}, {2}, {}, {1}}, {{}, {0, 0}, {}, {1, 2}}};
  double mean_eps = 0.0;
  for (const auto& p : data) mean_eps += information_difference(m, p) / 3.0;
  EXPECT_NEAR(agility(m, data), -mean_eps, 1e-15);
}

TEST(Agility, PropertiesOnRandomModels) {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t V = uniform_size(rng, 2, 10);
    const ToyLM m = ToyLM::random(V, 2, 3, 2.0, rng);
    std::vector<PreferencePair> data;
    double mean_signed = 0.0;
    for (int i = 0; i < 4; ++i) {
      data.push_back(random_pair(V, rng, 3));
      mean_signed += signed_information_difference(m, data.back()) / 4.0;
    }
    const double a = agility(m, data);
    EXPECT_LE(std::abs(a), 1.0);
    EXPECT_NEAR(a, -mean_signed, 1e-15);
  }
}

TEST(InformationDifference, LongLowEpsPairIsTiny) {
  Rng rng(7);
  const ToyLM m = ToyLM::random(16, 8, 16, 0.5, rng);
  const TokenSeq x = random_tokens(10, 16, rng);
  TokenSeq x2 = x;
  x2.ids[3] = (x2.ids[3] + 1) % 16;
  const TokenSeq y = random_tokens(30, 16, rng);
  EXPECT_LT(information_difference(m, {x, y, x2, y}), 1e-20);
}

TEST(GradientDifference, SharedConditioningIsZero) {
  Rng rng(8);
  const ToyLM m = ToyLM::random(6, 3, 3, 1.0, rng);
  const PreferencePair p{{1, 2}, {3, 4, 5}, {1, 2}, {3, 0, 1}};
  EXPECT_EQ(gradient_difference(m, p, 1), 0.0);
  EXPECT_EQ(gradient_difference(m, p, 2), 0.0);
  EXPECT_GT(gradient_difference(m, p, 3), 0.0);
}

TEST(GradientDifference, SharedContextFirstStepIsZeroAlways) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const ToyLM m = ToyLM::random(8, 3, 4, 1.0, rng);
    PreferencePair p = random_pair(8, rng);
    p.x_neg = p.x_pos;
    for (Norm n : {Norm::kL1, Norm::kL2, Norm::kInf}) EXPECT_EQ(gradient_difference(m, p, 1, n), 0.0);
  }
}

TEST(GradientDifference, MatchesDirectRecomputation) {
  Rng rng(10);
  const ToyLM m = ToyLM::random(6, 3, 4, 1.0, rng);
  const PreferencePair p{{1, 2}, {3, 4}, {5}, {0, 1}};
  const auto a = oracle_probs(m, {1, 2}, {3});
  const auto b = oracle_probs(m, {5}, {0});
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    l1 += d;
    l2 += d * d;
    linf = std::max(linf, d);
  }
  EXPECT_NEAR(gradient_difference(m, p, 2, Norm::kL1), l1, 1e-14);
  EXPECT_NEAR(gradient_difference(m, p, 2, Norm::kL2), std::sqrt(l2), 1e-14);
  EXPECT_NEAR(gradient_difference(m, p, 2, Norm::kInf), linf, 1e-14);
}

TEST(GradientDifference, NormProperties) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const ToyLM m = ToyLM::random(7, 3, 3, 2.0, rng);
    const TokenSeq y = random_tokens(2, 7, rng);
    const TokenSeq xa = random_tokens(2, 7, rng), xb = random_tokens(3, 7, rng), xc = random_tokens(1, 7, rng);
    const double ab = gradient_difference(m, {xa, y, xb, y}, 2);
    const double ba = gradient_difference(m, {xb, y, xa, y}, 2);
    const double bc = gradient_difference(m, {xb, y, xc, y}, 2);
    const double ac = gradient_difference(m, {xa, y, xc, y}, 2);
    EXPECT_EQ(ab, ba);
    EXPECT_LE(ac, ab + bc + 1e-15);
    EXPECT_LE(ab, 2.0);
  }
}

TEST(GradientDifference, RejectsStepPastEnd) {
  const ToyLM m(4, 2, 2);
  EXPECT_THROW(gradient_difference(m, {{0}, {1}, {0}, {2, 3}}, 2), std::out_of_range);
  EXPECT_THROW(gradient_difference(m, {{0}, {1}, {0}, {2}}, 0), std::out_of_range);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 3, 2, 5, 4}), 0.8, 1e-15);
}

TEST(MetricsCsv, HeaderAndRowAgree) {
  Rng rng(12);
  const ToyLM m = ToyLM::random(5, 2, 2, 1.0, rng);
  const std::vector<PreferencePair> data{random_pair(5, rng), random_pair(5, rng)};
  const std::string header = metrics_csv_header();
  const std::string row = metrics_csv_row(3, evaluate(m, data));
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(row.rfind("3,", 0), 0u);
}
