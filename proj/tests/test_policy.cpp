#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "remav/error.hpp"
#include "remav/policy.hpp"

using namespace remav;
using namespace remav::policy;

namespace {

sim::Observation some_obs(double shift = 0.0) {
  sim::Observation o{};
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.1 * static_cast<double>(i) - 0.4 + shift;
  return o;
}

// Actor whose output is p(a3) = 1 - 8e-9 and 1e-9 elsewhere.
Policy one_hotish(int action) {
  Policy p = Policy::uniform();
  const double logit = std::log((1.0 - 8e-9) / 1e-9);
  p.actor.bias(0, static_cast<std::size_t>(action)) = logit;
  return p;
}

}  // namespace

TEST(Act, UniformGreedyPicksLowestIndex) {
  Policy p = Policy::uniform();
  p.mode = ActionMode::Greedy;
  Rng rng(0);
  EXPECT_EQ(act(p, some_obs(), rng).action, 0);
}

TEST(Act, OneHotIsChosenInBothModes) {
  Policy p = one_hotish(3);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(act(p, some_obs(), rng).action, 3);
  p.mode = ActionMode::Greedy;
  EXPECT_EQ(act(p, some_obs(), rng).action, 3);
}

TEST(Act, GreedyIsPure) {
  Policy p = Policy::av(4);
  p.mode = ActionMode::Greedy;
  Rng a(1), b(2);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(act(p, some_obs(0.01 * i), a).action, act(p, some_obs(0.01 * i), b).action);
}

TEST(Act, LogProbMatchesActor) {
  const Policy p = Policy::av(5);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto obs = some_obs(0.003 * i);
    const auto r = act(p, obs, rng);
    const auto probs = nn::forward(p.actor, obs);
    EXPECT_NEAR(r.log_prob, std::log(probs[static_cast<std::size_t>(r.action)]), 1e-12);
  }
}

TEST(Act, SampleFrequenciesWithinBinomialBounds) {
  const Policy p = Policy::av(6);
  const auto obs = some_obs(0.5);
  const auto probs = nn::forward(p.actor, obs);
  Rng rng(99);
  const int n = 100000;
  std::vector<int> counts(9, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(act(p, obs, rng).action)];
  for (std::size_t a = 0; a < 9; ++a) {
    const double sd = std::sqrt(n * probs[a] * (1 - probs[a]));
    EXPECT_LE(std::abs(counts[a] - n * probs[a]), 3 * sd + 1) << "action " << a;
  }
}

TEST(Act, NonFiniteObservationRejected) {
  const Policy p = Policy::av(1);
  auto obs = some_obs();
  obs[2] = std::nan("");
  Rng rng(0);
  EXPECT_THROW(act(p, obs, rng), NumericError);
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  const std::vector<double> r = {1.0, 1.0, 1.0};
  const std::vector<double> v = {2.0, 2.0, 2.0};
  const auto g = compute_gae(r, v, 2.0, 0.9, 0.0);
  for (double a : g.advantages) EXPECT_DOUBLE_EQ(a, 1.0 + 0.9 * 2.0 - 2.0);
}

TEST(Gae, GammaZeroIsRewardMinusValue) {
  const std::vector<double> r = {1.0, -2.0, 0.5};
  const std::vector<double> v = {0.3, 0.1, -0.7};
  const auto g = compute_gae(r, v, 5.0, 0.0, 0.95);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(g.advantages[t], r[t] - v[t]);
}

TEST(Gae, MatchesNestedSumOracle) {
  Rng rng(8);
  const std::size_t n = 10;
  std::vector<double> r(n), v(n);
  for (auto& x : r) x = rng.uniform(-1, 1);
  for (auto& x : v) x = rng.uniform(-1, 1);
  const double boot = 0.37, gamma = 0.97, lambda = 0.9;
  const auto g = compute_gae(r, v, boot, gamma, lambda);
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0.0;
    for (std::size_t l = 0; t + l < n; ++l) {
      const double next = t + l + 1 < n ? v[t + l + 1] : boot;
      const double delta = r[t + l] + gamma * next - v[t + l];
      sum += std::pow(gamma * lambda, static_cast<double>(l)) * delta;
    }
    EXPECT_NEAR(g.advantages[t], sum, 1e-12);
    EXPECT_NEAR(g.returns[t], sum + v[t], 1e-12);
  }
}

TEST(Gae, EmptySequenceRejected) {
  const std::vector<double> none;
  EXPECT_THROW(compute_gae(none, none, 0.0, 0.99, 0.95), ValidationError);
}

TEST(Advantages, NormalizedMoments) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(2 + rng.index(200));
    for (auto& x : a) x = rng.uniform(-50, 50);
    normalize_advantages(a);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(a.size())), 1.0, 1e-9);
  }
}

TEST(Surrogate, ClipActiveExactlyOutsideBand) {
  Rng rng(13);
  const double eps = 0.3;
  for (int i = 0; i < 10000; ++i) {
    const double ratio = rng.uniform(0.2, 2.0);
    const double adv = rng.uniform(-3, 3);
    const auto s = clipped_surrogate(ratio, adv, eps);
    EXPECT_EQ(s.clip_active, std::abs(ratio - 1.0) > eps);
    EXPECT_DOUBLE_EQ(s.objective, std::min(ratio * adv, std::clamp(ratio, 1 - eps, 1 + eps) * adv));
    // The gradient-carrying branch never sits outside the band in the improving direction.
    if (s.d_ratio != 0.0) {
      if (adv > 0) EXPECT_LE(ratio, 1 + eps);
      if (adv < 0) EXPECT_GE(ratio, 1 - eps);
    }
  }
}

TEST(Train, ZeroStepsReturnsSeededInitialization) {
  PpoHyper h;
  h.total_steps = 0;
  const auto c = sim::ScenarioConfig::make(sim::ScenarioKind::Straight);
  const auto r = ppo_train(c, h, 21);
  EXPECT_EQ(r.policy, Policy::av(derive_seed(21, Stream::Init)));
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, LogLengthIsBudgetOverBatch) {
  PpoHyper h;
  h.total_steps = 1000;
  h.batch_size = 128;
  h.epochs = 1;
  const auto r = ppo_train(sim::ScenarioConfig::make(sim::ScenarioKind::Straight), h, 1);
  EXPECT_EQ(r.log.size(), 1000u / 128u);
}

TEST(Train, Deterministic) {
  PpoHyper h;
  h.total_steps = 512;
  h.epochs = 2;
  const auto c = sim::ScenarioConfig::make(sim::ScenarioKind::Pedestrian);
  EXPECT_EQ(ppo_train(c, h, 3).policy, ppo_train(c, h, 3).policy);
}

TEST(Train, StraightBeatsUniformPolicy) {
  PpoHyper h;
  h.total_steps = 50000;
  const auto c = sim::ScenarioConfig::make(sim::ScenarioKind::Straight);
  const auto r = ppo_train(c, h, 1);
  const double trained = evaluate(r.policy, c, 10, 77);
  const double uniform = evaluate(Policy::uniform(), c, 10, 77);
  EXPECT_GT(trained, uniform);
}

TEST(Hyper, Validation) {
  PpoHyper h;
  h.gamma = 0.0;
  EXPECT_THROW(h.validate(), ValidationError);
  h = PpoHyper{};
  h.clip = 0.0;
  EXPECT_THROW(h.validate(), ValidationError);
  EXPECT_EQ(ppo_hyper_from_json(to_json(PpoHyper{})), PpoHyper{});
}

TEST(Serialization, PolicyRoundTrip) {
  const Policy p = Policy::av(10);
  EXPECT_EQ(policy_from_json(nlohmann::json::parse(to_json(p).dump())), p);
}
