#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "remav/error.hpp"
#include "remav/testing.hpp"

using namespace remav;
using namespace remav::testing;

namespace {

const sim::ScenarioConfig& pedestrian() {
  static const auto c = sim::ScenarioConfig::make(sim::ScenarioKind::Pedestrian);
  return c;
}

// Scripted stand-in model: -1, 0 or +1 depending on the action, so ties with beta = 0 occur.
double scripted(const sim::Observation&, int action) { return static_cast<double>(action % 3) - 1.0; }

EpisodeRecord record(int n, std::initializer_list<int> os_steps, std::initializer_list<int> co_steps = {}) {
  EpisodeRecord e;
  e.steps.resize(n);
  for (int i : os_steps) e.steps[i].os = true;
  for (int i : co_steps) e.steps[i].co = true;
  e.finalize();
  return e;
}

bool same_outcomes(const TestReport& a, const TestReport& b) {
  if (a.episodes.size() != b.episodes.size()) return false;
  for (std::size_t e = 0; e < a.episodes.size(); ++e) {
    const auto& x = a.episodes[e].steps;
    const auto& y = b.episodes[e].steps;
    if (x.size() != y.size()) return false;
    for (std::size_t t = 0; t < x.size(); ++t) {
      if (x[t].cv != y[t].cv || x[t].co != y[t].co || x[t].cp != y[t].cp || x[t].os != y[t].os) return false;
    }
  }
  return a.aggregates == b.aggregates;
}

}  // namespace

TEST(Noise, ZeroSigmaGivesZeroVector) {
  Rng rng(1);
  for (double x : gaussian_noise(rng, 12, 0.0)) EXPECT_EQ(x, 0.0);
}

TEST(Noise, GaussianDeterministic) {
  Rng a(9), b(9);
  EXPECT_EQ(gaussian_noise(a, 12, 0.001), gaussian_noise(b, 12, 0.001));
}

TEST(Noise, GaussianMoments) {
  Rng rng(2);
  const auto v = gaussian_noise(rng, 1000000, 0.001);
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / v.size());
  EXPECT_LT(std::abs(m), 5e-6);
  EXPECT_NEAR(sd, 0.001, 0.01 * 0.001);
}

TEST(Noise, UniformDegenerateAndRange) {
  Rng rng(3);
  EXPECT_EQ(uniform_noise(rng, 0.0, 0.0), 0.0);
  for (int i = 0; i < 100000; ++i) {
    const double x = uniform_noise(rng, 0.0, 0.001);
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 0.001);
  }
}

TEST(Noise, UniformMean) {
  Rng rng(4);
  double m = 0.0;
  for (int i = 0; i < 1000000; ++i) m += uniform_noise(rng, 0.0, 0.001);
  m /= 1e6;
  EXPECT_NEAR(m, 0.0005, 0.01 * 0.0005);
}

TEST(Noise, ConfigValidation) {
  DisturbanceConfig d;
  d.sigma = -1;
  EXPECT_THROW(d.validate(), ValidationError);
  d = {};
  d.a = 0.002;
  EXPECT_THROW(d.validate(), ValidationError);
}

TEST(Perturb, Observation) {
  Rng rng(5);
  std::vector<double> obs(12), noise(12, 0.0), neg(12);
  for (auto& x : obs) x = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < 12; ++i) neg[i] = -obs[i];
  const auto same = perturb_observation(obs, noise);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(same[i], obs[i]);
  for (double x : perturb_observation(obs, neg)) EXPECT_EQ(x, 0.0);
  const auto n = gaussian_noise(rng, 12, 0.5);
  const auto sum = perturb_observation(obs, n);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(sum[i], obs[i] + n[i]);
  EXPECT_THROW(perturb_observation(obs, std::vector<double>(11)), DimensionError);
}

TEST(Perturb, NpcAction) {
  const sim::Kinematics k;
  const sim::NpcCommand ped{1.2, 0.0};
  EXPECT_EQ(perturb_npc_action(ped, {}, sim::Role::NpcPedestrian, k), ped);
  EXPECT_NEAR(perturb_npc_action(ped, {0.0005, 0.0}, sim::Role::NpcPedestrian, k).speed, 1.2005, 1e-15);
  EXPECT_EQ(perturb_npc_action({k.pedestrian_v_max, 0}, {0.0009, 0}, sim::Role::NpcPedestrian, k).speed,
            k.pedestrian_v_max);
  const auto car = perturb_npc_action({k.v_max - 0.0001, 0.2}, {0.0009, 0.0005}, sim::Role::NpcVehicle, k);
  EXPECT_EQ(car.speed, k.v_max);
  EXPECT_NEAR(car.heading_rate, 0.2005, 1e-15);
}

TEST(Mode, Names) {
  for (auto m : {ModeKind::Baseline, ModeKind::ReMAV, ModeKind::RT, ModeKind::ST}) {
    EXPECT_EQ(mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(mode_from_string("fuzz"), ValidationError);
  EXPECT_EQ(noise_from_string("npc"), NoiseKind::NpcAction);
}

TEST(Run, StCoverageIsExactlyOne) {
  const auto out = run_test(TestMode::st(), policy::Policy::uniform(), pedestrian(), {}, 3, 200, 1);
  EXPECT_EQ(out.report.coverage.perturbed_fraction, 1.0);
  for (const auto& e : out.report.episodes) {
    for (const auto& s : e.steps) EXPECT_TRUE(s.perturbed);
  }
}

TEST(Run, RtCoverageWithinBinomialBounds) {
  auto c = pedestrian();
  const auto out = run_test(TestMode::rt(), policy::Policy::uniform(), c, {}, 50, 1500, 2);
  long n = 0;
  for (const auto& e : out.report.episodes) n += static_cast<long>(e.steps.size());
  const double bound = 3.0 * std::sqrt(0.25 / n);
  EXPECT_NEAR(out.report.coverage.perturbed_fraction, 0.5, bound);
}

TEST(Run, RemavGatingExactness) {
  const auto mode = TestMode::remav(Scorer(scripted), 0.0);
  const auto out = run_test(mode, policy::Policy::av(3), pedestrian(), {}, 5, 300, 3);
  long triggers = 0;
  for (const auto& e : out.report.episodes) {
    ASSERT_FALSE(e.steps.empty());
    EXPECT_FALSE(e.steps[0].perturbed);
    for (std::size_t t = 0; t < e.steps.size(); ++t) {
      ASSERT_TRUE(e.steps[t].r_psi.has_value());
      if (t + 1 < e.steps.size()) {
        EXPECT_EQ(e.steps[t + 1].perturbed, *e.steps[t].r_psi < 0.0);
        triggers += e.steps[t + 1].perturbed;
      }
    }
  }
  EXPECT_GT(triggers, 0);
}

TEST(Run, RemavGateBelowMinimumEqualsBaseline) {
  const auto policy = policy::Policy::av(4);
  const auto gated = run_test(TestMode::remav(Scorer(scripted), -1.0), policy, pedestrian(), {}, 3, 300, 4);
  const auto base = run_test(TestMode::baseline(), policy, pedestrian(), {}, 3, 300, 4);
  EXPECT_EQ(gated.report.coverage.perturbed_fraction, 0.0);
  EXPECT_TRUE(same_outcomes(gated.report, base.report));
  EXPECT_EQ(gated.report.coverage, base.report.coverage);
}

TEST(Run, ZeroNoiseIsPureInEveryMode) {
  const auto policy = policy::Policy::av(5);
  const auto base = run_test(TestMode::baseline(), policy, pedestrian(), {}, 3, 300, 6);
  for (auto kind : {NoiseKind::Observation, NoiseKind::NpcAction}) {
    DisturbanceConfig d;
    d.kind = kind;
    d.sigma = 0.0;
    d.a = d.b = 0.0;
    for (const auto& mode : {TestMode::st(), TestMode::rt(), TestMode::remav(Scorer(scripted), 0.5)}) {
      const auto run = run_test(mode, policy, pedestrian(), d, 3, 300, 6);
      EXPECT_TRUE(same_outcomes(run.report, base.report)) << to_string(mode.kind) << " " << to_string(kind);
    }
  }
}

TEST(Run, NoiseChangesStTrajectory) {
  const auto policy = policy::Policy::av(5);
  DisturbanceConfig d;
  d.sigma = 0.5;
  const auto base = run_test(TestMode::baseline(), policy, pedestrian(), d, 3, 300, 6);
  const auto st = run_test(TestMode::st(), policy, pedestrian(), d, 3, 300, 6);
  EXPECT_FALSE(same_outcomes(st.report, base.report));
}

TEST(Run, Deterministic) {
  const auto policy = policy::Policy::av(7);
  const auto a = run_test(TestMode::rt(), policy, pedestrian(), {}, 2, 200, 8);
  const auto b = run_test(TestMode::rt(), policy, pedestrian(), {}, 2, 200, 8);
  EXPECT_EQ(to_json(a.report).dump(), to_json(b.report).dump());
}

TEST(Run, FirstCollisionMatchesRawFlags) {
  const auto out = run_test(TestMode::st(), policy::Policy::uniform(), pedestrian(), {}, 10, 400, 9);
  for (const auto& e : out.report.episodes) {
    std::optional<int> first;
    for (std::size_t t = 0; t < e.steps.size() && !first; ++t) {
      if (e.steps[t].cv || e.steps[t].co || e.steps[t].cp) first = static_cast<int>(t);
    }
    EXPECT_EQ(e.first_collision, first);
    if (first) EXPECT_EQ(*first + 1, static_cast<int>(e.steps.size()));
  }
}

TEST(Run, InconsistentConfigurationsRejected) {
  DisturbanceConfig npc;
  npc.kind = NoiseKind::NpcAction;
  const auto straight = sim::ScenarioConfig::make(sim::ScenarioKind::Straight);
  EXPECT_THROW(run_test(TestMode::st(), policy::Policy::uniform(), straight, npc, 1, 10, 1), ValidationError);
  TestMode missing;
  missing.kind = ModeKind::ReMAV;
  EXPECT_THROW(run_test(missing, policy::Policy::uniform(), pedestrian(), {}, 1, 10, 1), ValidationError);
  auto model = std::make_shared<airl::RewardModel>(airl::RewardModel::initial(sim::ScenarioKind::ThreeWay, 1));
  EXPECT_THROW(run_test(TestMode::remav(model, 0.0), policy::Policy::uniform(), pedestrian(), {}, 1, 10, 1),
               ValidationError);
}

TEST(Run, StraightReportsOnlyApplicableMetrics) {
  const auto straight = sim::ScenarioConfig::make(sim::ScenarioKind::Straight);
  const auto out = run_test(TestMode::baseline(), policy::Policy::uniform(), straight, {}, 2, 100, 1);
  EXPECT_FALSE(out.report.aggregates.cv);
  EXPECT_TRUE(out.report.aggregates.co);
  EXPECT_FALSE(out.report.aggregates.cp);
  EXPECT_TRUE(out.report.aggregates.os);
}

TEST(Metrics, OffroadExample) {
  const std::vector<EpisodeRecord> eps{record(10, {3, 4})};
  const auto a = compute_metrics(eps, 0.1);
  EXPECT_NEAR(a.os->mean, 0.2, 1e-15);
  ASSERT_TRUE(a.ttfo);
  EXPECT_NEAR(*a.ttfo, 0.3, 1e-15);
  EXPECT_EQ(a.ttfo_never, 0);
  EXPECT_FALSE(a.ttfc);
  EXPECT_EQ(a.ttfc_never, 1);
}

TEST(Metrics, NeverCounts) {
  const std::vector<EpisodeRecord> eps{record(5, {}), record(7, {}), record(3, {})};
  const auto a = compute_metrics(eps, 0.1);
  EXPECT_FALSE(a.ttfc);
  EXPECT_EQ(a.ttfc_never, 3);
  EXPECT_FALSE(a.ttfo);
  EXPECT_EQ(a.ttfo_never, 3);
}

TEST(Metrics, PopulationSpreadAcrossEpisodes) {
  const std::vector<EpisodeRecord> eps{record(10, {1}), record(10, {2, 5, 7})};
  const auto a = compute_metrics(eps, 0.1);
  EXPECT_NEAR(a.os->mean, 0.2, 1e-15);
  EXPECT_NEAR(a.os->std, 0.1, 1e-15);
  EXPECT_NEAR(*a.ttfo, (0.1 + 0.2) / 2, 1e-15);
}

TEST(Metrics, ApplicabilityRestrictsRates) {
  const std::vector<EpisodeRecord> eps{record(10, {}, {9})};
  const auto a = compute_metrics(eps, 0.1, sim::applicable_metrics(sim::ScenarioKind::Straight));
  EXPECT_FALSE(a.cv);
  EXPECT_FALSE(a.cp);
  EXPECT_NEAR(a.co->mean, 0.1, 1e-15);
  EXPECT_NEAR(*a.ttfc, 0.9, 1e-15);
}

TEST(Coverage, MatchesCountingOracle) {
  Rng rng(10);
  std::vector<EpisodeRecord> eps(7);
  long steps = 0, perturbed = 0, failures = 0;
  for (auto& e : eps) {
    e.steps.resize(1 + rng.index(50));
    for (auto& s : e.steps) {
      s.perturbed = rng.coin();
      s.os = rng.uniform01() < 0.2;
      s.cp = rng.uniform01() < 0.05;
      ++steps;
      perturbed += s.perturbed;
      failures += s.os || s.cp;
    }
    e.finalize();
  }
  const auto c = coverage_stats(eps);
  EXPECT_DOUBLE_EQ(c.perturbed_fraction, static_cast<double>(perturbed) / steps);
  EXPECT_DOUBLE_EQ(c.failure_fraction, static_cast<double>(failures) / steps);
  ASSERT_TRUE(c.failures_per_perturbation);
  EXPECT_DOUBLE_EQ(*c.failures_per_perturbation, c.failure_fraction / c.perturbed_fraction);
}

TEST(Coverage, RatioAbsentWithoutPerturbation) {
  const std::vector<EpisodeRecord> eps{record(10, {})};
  const auto c = coverage_stats(eps);
  EXPECT_EQ(c.perturbed_fraction, 0.0);
  EXPECT_EQ(c.failure_fraction, 0.0);
  EXPECT_FALSE(c.failures_per_perturbation);
}

TEST(Report, JsonRoundTripAndTableRow) {
  const auto out =
      run_test(TestMode::remav(Scorer(scripted), 0.0), policy::Policy::av(2), pedestrian(), {}, 2, 150, 3);
  const auto back = report_from_json(nlohmann::json::parse(to_json(out.report).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(out.report).dump());
  EXPECT_EQ(table_row(back), table_row(out.report));
  const std::string header = table_header();
  EXPECT_EQ(header.rfind("scenario,mode,noise,CV,CO,CP,OS,TTFC,TTFO,perturbed_fraction", 0), 0u);
  const auto row = table_row(out.report);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
}

TEST(Report, TracesRecordedForRequestedEpisodes) {
  RunOptions opt;
  opt.trace_episodes = 2;
  const auto out = run_test(TestMode::baseline(), policy::Policy::uniform(), pedestrian(), {}, 4, 50, 1, opt);
  EXPECT_EQ(out.traces.size(), 2u);
}
