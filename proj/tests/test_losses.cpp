#include <gtest/gtest.h>

#include <cmath>

#include "rgpb/errors.hpp"
#include "rgpb/losses.hpp"
#include "test_support.hpp"

using namespace rgpb;
using namespace rgpb::testing;

namespace {

// Every context and prefix gives the distribution `p`.
ToyLM model_with_probs(const std::vector<double>& p) {
  ToyLM m(p.size(), 1, 1);
  for (std::size_t i = 0; i < p.size(); ++i) m.b2(i, 0) = std::log(p[i]);
  return m;
}

double log_sigmoid(double x) { return -std::log1p(std::exp(-x)); }

}  // namespace

TEST(MleLoss, UniformModel) {
  const ToyLM m(8, 2, 2);
  const std::vector<PreferencePair> batch{{{1}, {2, 3}, {1}, {4}}, {{}, {5}, {}, {6}}};
  EXPECT_NEAR(mle_loss(m, batch), std::log(8.0), 1e-15);
}

TEST(MleLoss, CertainModelIsZero) {
  ToyLM m(3, 1, 1);
  m.b2(2, 0) = 800.0;
  const std::vector<PreferencePair> batch{{{0}, {2, 2}, {0}, {1}}};
  EXPECT_EQ(mle_loss(m, batch), 0.0);
}

TEST(MleLoss, MeanOfPerStepNll) {
  Rng rng(1);
  const ToyLM m = ToyLM::random(9, 3, 4, 1.0, rng);
  std::vector<PreferencePair> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_pair(9, rng));
  double expected = 0.0;
  for (const auto& p : batch) {
    expected += -oracle_seq_logprob(m, p.x_pos, p.y_pos) / static_cast<double>(p.y_pos.size());
  }
  EXPECT_NEAR(mle_loss(m, batch), expected / 4.0, 1e-13);
}

TEST(DpoLoss, IdenticalPairIsLog2) {
  Rng rng(2);
  const ToyLM m = ToyLM::random(6, 3, 3, 1.0, rng);
  const PreferencePair p{{1}, {2, 3}, {1}, {2, 3}};
  for (double beta : {0.01, 1.0, 7.0}) EXPECT_NEAR(dpo_loss(m, nullptr, p, beta), std::log(2.0), 1e-15);
}

TEST(DpoLoss, ReferenceEqualToModelIsLog2) {
  Rng rng(3);
  const ToyLM m = ToyLM::random(6, 3, 3, 1.0, rng);
  const PreferencePair p{{1}, {2, 3}, {4}, {5}};
  EXPECT_NEAR(dpo_loss(m, &m, p, 1.3), std::log(2.0), 1e-15);
}

TEST(DpoLoss, EngineeredSingleStep) {
  const ToyLM m = model_with_probs({0.6, 0.1, 0.3});
  const PreferencePair p{{}, {0}, {}, {1}};
  EXPECT_NEAR(dpo_loss(m, nullptr, p, 1.0), std::log(7.0 / 6.0), 1e-12);
  EXPECT_NEAR(dpo_loss(m, nullptr, p, 1.0), -log_sigmoid(std::log(6.0)), 1e-12);
}

TEST(DpoLoss, NoLengthNormalization) {
  Rng rng(4);
  const ToyLM m = ToyLM::random(5, 2, 3, 1.0, rng);
  const PreferencePair p{{1}, {2, 3, 4}, {0}, {1}};
  const double margin = oracle_seq_logprob(m, p.x_pos, p.y_pos) - oracle_seq_logprob(m, p.x_neg, p.y_neg);
  EXPECT_NEAR(dpo_loss(m, nullptr, p, 0.5), -log_sigmoid(0.5 * margin), 1e-12);
}

TEST(DpoLoss, SmallBetaTendsToLog2) {
  Rng rng(5);
  const ToyLM m = ToyLM::random(8, 3, 4, 1.0, rng);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 20; ++i) pairs.push_back(random_pair(8, rng));
  double previous = INFINITY;
  for (double beta : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
    double worst = 0.0;
    for (const auto& p : pairs) worst = std::max(worst, std::abs(dpo_loss(m, nullptr, p, beta) - std::log(2.0)));
    EXPECT_LT(worst, previous);
    previous = worst;
  }
  EXPECT_LT(previous, 1e-4);
}

TEST(UlLoss, PerfectModelIsZero) {
  ToyLM m(3, 1, 1);
  m.b2(0, 0) = 800.0;  // P(y+) rounds to 1 and P(y-) underflows to 0
  EXPECT_EQ(ul_loss(m, {{}, {0}, {}, {1}}, 1.0), 0.0);
}

TEST(UlLoss, EngineeredSingleStep) {
  const ToyLM m = model_with_probs({0.5, 0.25, 0.25});
  const PreferencePair p{{}, {0}, {}, {1}};
  EXPECT_NEAR(ul_loss(m, p, 1.0), -std::log(0.5) - std::log(0.75), 1e-12);
  EXPECT_NEAR(ul_loss(m, p, 1.0), 0.98083, 1e-5);
}

TEST(UlLoss, DivergesNearCertainNegative) {
  // M / beta stays <= 30 so 1 - q is still representable.
  for (double M : {5.0, 10.0, 15.0}) {
    for (double beta : {0.5, 1.0, 2.0}) {
      const double q = 1.0 - 0.5 * std::exp(-M / beta);  // just above 1 - exp(-M/beta)
      EXPECT_GT(single_step_loss(Method::kUl, 0.5, q, beta), M);
    }
  }
}

TEST(UlLoss, CertainNegativeIsDomainError) {
  ToyLM m(3, 1, 1);
  m.b2(1, 0) = 800.0;
  EXPECT_THROW(ul_loss(m, {{}, {0}, {}, {1}}, 1.0), DomainError);
}

TEST(ExmateLoss, EngineeredSingleStep) {
  const ToyLM m = model_with_probs({0.5, 0.25, 0.25});
  const PreferencePair p{{}, {0}, {}, {1}};
  EXPECT_NEAR(exmate_loss(m, p, 1.0), -std::log(0.5) + 0.25, 1e-12);
}

TEST(ExmateLoss, PerfectModelTendsToZero) {
  EXPECT_NEAR(single_step_loss(Method::kExmate, 1.0, 1e-12, 1.0), 0.0, 1e-11);
}

TEST(ExmateLoss, PenaltyInZeroBeta) {
  Rng rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> lp(uniform_size(rng, 1, 6));
    for (double& v : lp) v = std::log(uniform_real(rng, 1e-6, 1.0));
    const double beta = uniform_real(rng, 1e-3, 5.0);
    const double pen = exmate_penalty(lp, beta);
    EXPECT_GT(pen, 0.0);
    EXPECT_LE(pen, beta);
  }
}

TEST(ExmateLoss, GeometricMeanOfNegativeSteps) {
  Rng rng(7);
  const ToyLM m = ToyLM::random(6, 2, 3, 1.0, rng);
  const PreferencePair p{{1}, {2}, {3, 4}, {0, 5, 1}};
  const double mean_neg = oracle_seq_logprob(m, p.x_neg, p.y_neg) / 3.0;
  const double mle = -oracle_seq_logprob(m, p.x_pos, p.y_pos);
  EXPECT_NEAR(exmate_loss(m, p, 0.7), mle + 0.7 * std::exp(mean_neg), 1e-12);
}

TEST(ExmateLoss, BetaZeroEqualsMle) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const ToyLM m = ToyLM::random(7, 3, 3, 1.0, rng);
    const PreferencePair p = random_pair(7, rng);
    const std::vector<PreferencePair> one{p};
    EXPECT_EQ(exmate_loss(m, p, 0.0), mle_loss(m, one));
  }
}

TEST(SingleStepLoss, StrictMonotonicityOnGrid) {
  for (Method method : {Method::kDpo, Method::kUl, Method::kExmate}) {
    for (std::size_t i = 1; i < 100; ++i) {
      const double a = 0.01 * static_cast<double>(i - 1) + 0.005;
      const double b = 0.01 * static_cast<double>(i) + 0.005;
      EXPECT_LT(single_step_loss(method, b, 0.1, 1.0), single_step_loss(method, a, 0.1, 1.0) - 1e-12)
          << to_string(method) << " f+ " << b;
      EXPECT_GT(single_step_loss(method, 0.1, b, 1.0), single_step_loss(method, 0.1, a, 1.0) + 1e-12)
          << to_string(method) << " f- " << b;
    }
  }
}

TEST(SingleStepLoss, MatchesModelLossesOnSharedContext) {
  const std::vector<double> p{0.35, 0.2, 0.45};
  const ToyLM m = model_with_probs(p);
  const PreferencePair pair{{}, {0}, {}, {1}};
  EXPECT_NEAR(single_step_loss(Method::kDpo, 0.35, 0.2, 0.9), dpo_loss(m, nullptr, pair, 0.9), 1e-12);
  EXPECT_NEAR(single_step_loss(Method::kUl, 0.35, 0.2, 0.9), ul_loss(m, pair, 0.9), 1e-12);
  EXPECT_NEAR(single_step_loss(Method::kExmate, 0.35, 0.2, 0.9), exmate_loss(m, pair, 0.9), 1e-12);
}

TEST(LossSpec, ValidationAndWarnings) {
  EXPECT_THROW((LossSpec{Method::kDpo, -1.0}).validate(), std::invalid_argument);
  EXPECT_THROW((LossSpec{Method::kUl, NAN}).validate(), std::invalid_argument);
  EXPECT_TRUE((LossSpec{Method::kDpo, 1.0, RefPolicy::kFrozenCopy}).validate().empty());
  EXPECT_FALSE((LossSpec{Method::kUl, 1.0, RefPolicy::kFrozenCopy}).validate().empty());
}

TEST(ParseMethod, AcceptsAliases) {
  EXPECT_EQ(parse_method("sft"), Method::kMle);
  EXPECT_EQ(parse_method("Unlikelihood"), Method::kUl);
  EXPECT_EQ(parse_method("EXMATE"), Method::kExmate);
  EXPECT_FALSE(parse_method("ppo").has_value());
}

TEST(CompositeLoss, StageLookup) {
  const Schedule two{{{LossSpec{Method::kMle}, 1}, {LossSpec{Method::kDpo}, 1}}};
  EXPECT_EQ(composite_loss(two, 0).method, Method::kMle);
  EXPECT_EQ(composite_loss(two, 1).method, Method::kDpo);
  const Schedule s{{{LossSpec{Method::kExmate}, 2}, {LossSpec{Method::kDpo}, 3}}};
  EXPECT_EQ(composite_loss(s, 1).method, Method::kExmate);
  EXPECT_EQ(composite_loss(s, 2).method, Method::kDpo);
  EXPECT_EQ(composite_loss(s, 4).method, Method::kDpo);
  EXPECT_THROW(composite_loss(s, 5), std::out_of_range);
  EXPECT_EQ(s.total_epochs(), 5u);
}

TEST(CompositeLoss, InvalidSchedules) {
  EXPECT_THROW(Schedule{}.validate(), std::invalid_argument);
  EXPECT_THROW((Schedule{{{LossSpec{Method::kMle}, 0}}}).validate(), std::invalid_argument);
}
