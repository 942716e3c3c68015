#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "remav/analysis.hpp"
#include "remav/error.hpp"

using namespace remav;
using namespace remav::analysis;

namespace {

std::vector<double> random_set(Rng& rng) {
  std::vector<double> v(1 + rng.index(200));
  const double spread = rng.uniform(0.01, 20.0);
  for (auto& x : v) x = rng.normal(rng.uniform(-5, 5), spread);
  return v;
}

}  // namespace

TEST(Threshold, ZeroVariance) {
  const std::vector<double> v{5, 5, 5};
  const auto t = threshold(v);
  EXPECT_EQ(t.mu, 5.0);
  EXPECT_EQ(t.sigma, 0.0);
  EXPECT_EQ(t.beta, 5.0);
}

TEST(Threshold, OneToFive) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto t = threshold(v);
  EXPECT_NEAR(t.mu, 3.0, 1e-12);
  EXPECT_NEAR(t.sigma, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(t.beta, 3.0 - 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(t.beta, 0.171573, 1e-6);
}

TEST(Threshold, SkewedSet) {
  const std::vector<double> v{0, 0, 0, 4};
  const auto t = threshold(v);
  EXPECT_NEAR(t.mu, 1.0, 1e-12);
  EXPECT_NEAR(t.sigma, std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(t.beta, 1.0 - 2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(t.beta, -2.464102, 1e-6);
}

TEST(Threshold, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(threshold(std::vector<double>{}), ValidationError);
  EXPECT_THROW(threshold(std::vector<double>{1.0, NAN}), ValidationError);
  EXPECT_THROW(threshold(std::vector<double>{INFINITY}), ValidationError);
}

TEST(ThresholdProperty, BetaIsMuMinusTwoSigmaAndBelowMu) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto v = random_set(rng);
    const auto t = threshold(v);
    EXPECT_EQ(t.beta, t.mu - 2.0 * t.sigma);
    EXPECT_GE(t.sigma, 0.0);
    EXPECT_LE(t.beta, t.mu);
    EXPECT_EQ(t.beta == t.mu, t.sigma == 0.0);
  }
}

TEST(ThresholdProperty, ShiftEquivariance) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    auto v = random_set(rng);
    const double c = rng.uniform(-10, 10);
    const auto a = threshold(v);
    for (auto& x : v) x += c;
    const auto b = threshold(v);
    const double tol = 1e-9 * (1 + std::abs(a.mu) + std::abs(c) + a.sigma);
    EXPECT_NEAR(b.mu, a.mu + c, tol);
    EXPECT_NEAR(b.sigma, a.sigma, tol);
    EXPECT_NEAR(b.beta, a.beta + c, tol);
  }
}

TEST(ThresholdProperty, ScaleEquivariance) {
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    auto v = random_set(rng);
    const double k = rng.uniform(0.01, 10);
    const auto a = threshold(v);
    for (auto& x : v) x *= k;
    const auto b = threshold(v);
    const double tol = 1e-9 * k * (1 + std::abs(a.mu) + a.sigma);
    EXPECT_NEAR(b.mu, k * a.mu, tol);
    EXPECT_NEAR(b.sigma, k * a.sigma, tol);
    EXPECT_NEAR(b.beta, k * a.beta, tol);
  }
}

TEST(Histogram, EdgesAndPlacement) {
  EXPECT_EQ(Histogram::edge(0), -17.0);
  EXPECT_EQ(Histogram::edge(kHistogramBins), 17.0);
  EXPECT_EQ(Histogram::edge(32), 0.0);
  EXPECT_EQ(Histogram::bin_of(-17.0), 0);
  EXPECT_EQ(Histogram::bin_of(17.0), kHistogramBins - 1);
  EXPECT_EQ(Histogram::bin_of(0.0), 32);
  EXPECT_EQ(Histogram::bin_of(std::nextafter(0.0, -1.0)), 31);
  for (int i = 0; i < kHistogramBins; ++i) {
    EXPECT_EQ(Histogram::bin_of(Histogram::edge(i)), i);
  }
}

TEST(Histogram, TotalMatchesSampleCount) {
  Rng rng(3);
  Histogram h;
  for (int i = 0; i < 5000; ++i) h.add(rng.uniform(-17, 17));
  EXPECT_EQ(h.total(), 5000);
}

TEST(Quantile, QuartilesOfOneToHundredMatchSortOracle) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double pos = q * 99;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min<std::size_t>(lo + 1, 99);
    const double expected = sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
    EXPECT_NEAR(quantile(v, q), expected, 1e-12);
  }
  EXPECT_NEAR(quantile(v, 0.5), 50.5, 1e-12);
}

TEST(Profile, SingleSample) {
  BehaviorProfile p;
  p.samples.push_back({0, 0, -2.5});
  p.finalize();
  EXPECT_EQ(p.stats.mu, -2.5);
  EXPECT_EQ(p.stats.sigma, 0.0);
  EXPECT_EQ(p.stats.beta, -2.5);
  EXPECT_EQ(p.histogram.total(), 1);
}

TEST(Profile, ScoreBehaviorOneStep) {
  const auto config = sim::ScenarioConfig::make(sim::ScenarioKind::Straight);
  const auto model = airl::RewardModel::initial(sim::ScenarioKind::Straight, 1);
  const auto p = score_behavior(policy::Policy::uniform(), model, config, 1, 1, 7);
  ASSERT_EQ(p.samples.size(), 1u);
  EXPECT_EQ(p.stats.beta, p.stats.mu);
  EXPECT_EQ(p.stats.mu, p.samples[0].r_psi);
}

TEST(Profile, SampleCountEqualsStepsExecuted) {
  const auto config = sim::ScenarioConfig::make(sim::ScenarioKind::Pedestrian);
  const auto model = airl::RewardModel::initial(sim::ScenarioKind::Pedestrian, 1);
  const auto p = score_behavior(policy::Policy::uniform(), model, config, 3, 150, 7);
  const auto set = trajectory::collect(policy::Policy::uniform(), config, 3, 150, 7);
  EXPECT_EQ(static_cast<std::size_t>(p.histogram.total()), p.samples.size());
  EXPECT_EQ(p.samples.size(), set.pair_count());
  std::size_t k = 0;
  for (const auto& t : set.trajectories) {
    for (const auto& s : t.steps) {
      EXPECT_EQ(p.samples[k].r_psi, model.reward(s.observation, s.action));
      ++k;
    }
  }
}

TEST(Profile, Deterministic) {
  const auto config = sim::ScenarioConfig::make(sim::ScenarioKind::ThreeWay);
  const auto model = airl::RewardModel::initial(sim::ScenarioKind::ThreeWay, 2);
  const auto a = score_behavior(policy::Policy::uniform(), model, config, 2, 100, 3);
  const auto b = score_behavior(policy::Policy::uniform(), model, config, 2, 100, 3);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Profile, ScenarioMismatchRejected) {
  const auto config = sim::ScenarioConfig::make(sim::ScenarioKind::ThreeWay);
  const auto model = airl::RewardModel::initial(sim::ScenarioKind::Straight, 2);
  EXPECT_THROW(score_behavior(policy::Policy::uniform(), model, config, 1, 10, 3), ValidationError);
}

TEST(Profile, JsonRoundTrip) {
  BehaviorProfile p;
  p.scenario = sim::ScenarioKind::Pedestrian;
  Rng rng(4);
  for (int i = 0; i < 50; ++i) p.samples.push_back({i / 10, i % 10, rng.normal(0, 3)});
  p.finalize();
  EXPECT_EQ(profile_from_json(nlohmann::json::parse(to_json(p).dump())), p);
}

TEST(Export, CsvShapes) {
  BehaviorProfile p;
  for (int i = 1; i <= 100; ++i) p.samples.push_back({0, i, static_cast<double>(i) / 10});
  p.finalize();
  std::ostringstream h;
  write_histogram_csv(h, p.histogram);
  std::istringstream hin(h.str());
  std::string line;
  int lines = 0;
  std::getline(hin, line);
  EXPECT_EQ(line, "bin,lo,hi,count");
  while (std::getline(hin, line)) ++lines;
  EXPECT_EQ(lines, kHistogramBins);

  const auto s = summarize(p);
  EXPECT_EQ(s.count, 100u);
  EXPECT_EQ(s.min, 0.1);
  EXPECT_EQ(s.max, 10.0);
  EXPECT_NEAR(s.median, 5.05, 1e-12);
  EXPECT_EQ(s.beta, p.stats.beta);
}
