#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "rgpb/errors.hpp"
#include "rgpb/grad_theory.hpp"
#include "rgpb/lm_core.hpp"
#include "rgpb/loss_gradient.hpp"
#include "test_support.hpp"

using namespace rgpb;
using namespace rgpb::testing;

TEST(ForwardStep, ZeroOutputLayerGivesUniform) {
  Rng rng(1);
  ToyLM m = ToyLM::random(6, 3, 4, 1.0, rng);
  m.w2 = Matrix(6, 4);
  m.b2 = Matrix(6, 1);
  const auto dist = forward_step(m, {1, 2}, {3});
  for (double p : dist.probs) EXPECT_DOUBLE_EQ(p, 1.0 / 6.0);
}

TEST(ForwardStep, TwoTokenZeroLogits) {
  const ToyLM m(2, 2, 2);
  const auto dist = forward_step(m, {}, {});
  EXPECT_EQ(dist.probs, (std::vector<double>{0.5, 0.5}));
}

TEST(ForwardStep, MatchesStraightLineOracle) {
  Rng rng(42);
  const ToyLM m = ToyLM::random(4, 3, 3, 0.8, rng);
  const auto dist = forward_step(m, {1}, {});
  const auto expected = oracle_probs(m, {1}, {});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(dist.probs[i], expected[i], 1e-15);
}

TEST(ForwardStep, NormalizedOverManyRandomModels) {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t V = uniform_size(rng, 2, 16);
    const ToyLM m = ToyLM::random(V, uniform_size(rng, 1, 6), uniform_size(rng, 1, 6), 2.0, rng);
    const auto dist = forward_step(m, random_tokens(uniform_size(rng, 0, 4), V, rng),
                                   random_tokens(uniform_size(rng, 0, 3), V, rng));
    worst = std::max(worst, std::abs(std::accumulate(dist.probs.begin(), dist.probs.end(), 0.0) - 1.0));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(ForwardStep, ShiftInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(uniform_size(rng, 2, 12));
    for (double& v : z) v = uniform_real(rng, -5, 5);
    const double c = uniform_real(rng, -50, 50);
    std::vector<double> shifted = z;
    for (double& v : shifted) v += c;
    const auto a = StepDistribution::from_logits(z);
    const auto b = StepDistribution::from_logits(shifted);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-12);
  }
}

TEST(ForwardStep, Deterministic) {
  Rng rng(5);
  const ToyLM m = ToyLM::random(9, 4, 5, 1.0, rng);
  const auto a = forward_step(m, {1, 2, 3}, {4, 5});
  const auto b = forward_step(m, {1, 2, 3}, {4, 5});
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(SeqLogprob, UniformModel) {
  const ToyLM m(4, 2, 3);
  EXPECT_NEAR(seq_logprob(m, {0}, {1, 2}).total, 2 * std::log(0.25), 1e-15);
}

TEST(SeqLogprob, SingleStepMatchesForward) {
  Rng rng(11);
  const ToyLM m = ToyLM::random(7, 3, 4, 1.0, rng);
  EXPECT_DOUBLE_EQ(seq_logprob(m, {2, 3}, {5}).total, forward_step(m, {2, 3}, {}).log_probs[5]);
}

TEST(SeqLogprob, MatchesPerStepOracle) {
  Rng rng(12);
  const ToyLM m = ToyLM::random(8, 4, 5, 1.0, rng);
  const TokenSeq x{1, 7}, y{3, 0, 6};
  const auto lp = seq_logprob(m, x, y);
  EXPECT_NEAR(lp.total, oracle_seq_logprob(m, x, y), 1e-13);
  ASSERT_EQ(lp.steps.size(), 3u);
  EXPECT_NEAR(lp.steps[1], std::log(oracle_probs(m, x, {3})[0]), 1e-13);
}

TEST(SeqLogprob, LongSequenceStaysFinite) {
  Rng rng(13);
  const ToyLM m = ToyLM::random(16, 4, 8, 1.0, rng);
  const auto lp = seq_logprob(m, {1}, random_tokens(400, 16, rng));
  EXPECT_TRUE(std::isfinite(lp.total));
  EXPECT_LT(lp.total, -400.0 * 0.5);
}

TEST(SeqLogprob, RejectsEmptyResponseAndBadIds) {
  const ToyLM m(4, 2, 2);
  EXPECT_THROW(seq_logprob(m, {0}, {}), std::invalid_argument);
  EXPECT_THROW(seq_logprob(m, {4}, {1}), std::invalid_argument);
  EXPECT_THROW(seq_logprob(m, {0}, {9}), std::invalid_argument);
}

TEST(SoftmaxJacobian, HalfHalf) {
  const auto J = softmax_jacobian(StepDistribution::from_logits({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(J(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(J(0, 1), -0.25);
  EXPECT_DOUBLE_EQ(J(1, 0), -0.25);
  EXPECT_DOUBLE_EQ(J(1, 1), 0.25);
}

TEST(SoftmaxJacobian, RowsSumToZero) {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(uniform_size(rng, 2, 16));
    for (double& v : z) v = uniform_real(rng, -4, 4);
    const auto J = softmax_jacobian(StepDistribution::from_logits(z));
    for (std::size_t r = 0; r < z.size(); ++r) {
      double s = 0.0;
      for (double v : J.row(r)) s += v;
      EXPECT_NEAR(s, 0.0, 1e-14);
    }
  }
}

TEST(SoftmaxJacobian, SaturatedIsZero) {
  const auto J = softmax_jacobian(StepDistribution::from_logits({800.0, 0.0, 0.0}));
  for (double v : J.values()) EXPECT_NEAR(v, 0.0, 1e-300);
}

TEST(SoftmaxJacobian, MatchesFiniteDifferences) {
  Rng rng(15);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(uniform_size(rng, 2, 10));
    for (double& v : z) v = uniform_real(rng, -3, 3);
    const auto J = softmax_jacobian(StepDistribution::from_logits(z));
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto up = z, down = z;
      up[i] += h;
      down[i] -= h;
      const auto pu = StepDistribution::from_logits(up).probs;
      const auto pd = StepDistribution::from_logits(down).probs;
      for (std::size_t j = 0; j < z.size(); ++j) EXPECT_NEAR((pu[j] - pd[j]) / (2 * h), J(j, i), 1e-7);
    }
  }
}

TEST(LossGradient, MleAtOptimumIsZero) {
  // Saturate b2 on token 1 and zero the hidden path so P(y=1) rounds to 1.
  ToyLM m(3, 2, 2);
  m.b2(1, 0) = 800.0;
  const Gradient g = loss_gradient(m, {Method::kMle, 1.0}, {{0}, {1, 1}, {0}, {2}});
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(LossGradient, DpoIdenticalPairIsZero) {
  Rng rng(16);
  const ToyLM m = ToyLM::random(6, 3, 4, 1.0, rng);
  const PreferencePair p{{1, 2}, {3, 4}, {1, 2}, {3, 4}};
  EXPECT_EQ(loss_gradient(m, {Method::kDpo, 0.7}, p).max_abs(), 0.0);
}

TEST(LossGradient, MatchesFiniteDifferencesOnSeededModels) {
  Rng rng(17);
  for (Method method : {Method::kMle, Method::kDpo, Method::kUl, Method::kExmate}) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t V = uniform_size(rng, 3, 10);
      const ToyLM m = ToyLM::random(V, 3, 4, 0.5, rng);
      const ToyLM ref = ToyLM::random(V, 3, 4, 0.5, rng);
      const PreferencePair p = random_pair(V, rng);
      const LossSpec spec{method, 0.8, method == Method::kDpo ? RefPolicy::kFrozenCopy : RefPolicy::kUnit};
      const ToyLM* r = spec.uses_reference() ? &ref : nullptr;
      const Gradient engine = loss_gradient(m, spec, p, r);
      const Gradient fd = finite_difference_gradient(
          [&](const ToyLM& model) { return pair_loss(model, spec, p, r); }, m);
      EXPECT_LT(max_rel_diff(engine, fd), 1e-6) << to_string(method);
    }
  }
}

TEST(LossGradient, Deterministic) {
  Rng rng(18);
  const ToyLM m = ToyLM::random(8, 3, 4, 1.0, rng);
  const PreferencePair p = random_pair(8, rng);
  for (Method method : {Method::kMle, Method::kDpo, Method::kUl, Method::kExmate}) {
    const Gradient a = loss_gradient(m, {method, 0.5}, p);
    const Gradient b = loss_gradient(m, {method, 0.5}, p);
    EXPECT_TRUE(a == b);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(19);
  const ToyLM m = ToyLM::random(5, 3, 4, 1.0, rng);
  std::stringstream buf;
  write_checkpoint(m, buf);
  const ToyLM back = read_checkpoint(buf);
  EXPECT_TRUE(static_cast<const ParameterBlocks&>(back) == m);
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(back.vocab_size(), 5u);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream buf("not a checkpoint");
  EXPECT_ANY_THROW(read_checkpoint(buf));
}

TEST(ToyLMState, CheckStateFlagsNonFinite) {
  ToyLM m(3, 2, 2);
  EXPECT_NO_THROW(m.check_state());
  m.w1(0, 0) = NAN;
  EXPECT_THROW(m.check_state(), StateError);
}
