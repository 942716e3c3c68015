#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "remav/error.hpp"
#include "remav/rng.hpp"
#include "remav/sim.hpp"

using namespace remav;
using namespace remav::sim;

namespace {

constexpr ScenarioKind kKinds[] = {ScenarioKind::Straight, ScenarioKind::Pedestrian, ScenarioKind::ThreeWay};

ScenarioConfig empty_road() {
  auto c = ScenarioConfig::make(ScenarioKind::Straight);
  c.road_objects.clear();
  return c;
}

}  // namespace

TEST(Actions, TableAnchors) {
  EXPECT_EQ(decode_action(0), (ActionCommand{-0.5, Longitudinal::Brake}));
  EXPECT_EQ(decode_action(4), (ActionCommand{0.0, Longitudinal::Coast}));
  EXPECT_EQ(decode_action(8), (ActionCommand{0.5, Longitudinal::Throttle}));
}

TEST(Actions, Bijection) {
  std::set<std::pair<double, int>> seen;
  for (int i = 0; i < kActionCount; ++i) {
    const auto cmd = decode_action(i);
    seen.insert({cmd.steer, static_cast<int>(cmd.longitudinal)});
    EXPECT_EQ(encode_action(cmd), i);
  }
  EXPECT_EQ(seen.size(), 9u);
  EXPECT_THROW(decode_action(9), ValidationError);
  EXPECT_THROW(decode_action(-1), ValidationError);
}

TEST(Scenario, RosterMatchesArchetype) {
  EXPECT_TRUE(ScenarioConfig::make(ScenarioKind::Straight).npcs.empty());
  const auto ped = ScenarioConfig::make(ScenarioKind::Pedestrian);
  ASSERT_EQ(ped.npcs.size(), 1u);
  EXPECT_EQ(ped.npcs[0].role, Role::NpcPedestrian);
  const auto tw = ScenarioConfig::make(ScenarioKind::ThreeWay);
  ASSERT_GE(tw.npcs.size(), 1u);
  for (const auto& n : tw.npcs) EXPECT_EQ(n.role, Role::NpcVehicle);
}

TEST(Scenario, ValidationCatchesBrokenInvariants) {
  auto c = ScenarioConfig::make(ScenarioKind::Straight);
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = ScenarioConfig::make(ScenarioKind::Straight);
  c.lane_width = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = ScenarioConfig::make(ScenarioKind::Straight);
  c.npcs = ScenarioConfig::make(ScenarioKind::Pedestrian).npcs;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Scenario, JsonRoundTrip) {
  for (auto k : kKinds) {
    const auto c = ScenarioConfig::make(k);
    EXPECT_EQ(scenario_from_json(to_json(c)), c);
  }
}

TEST(Reset, DeterministicAndSeeded) {
  for (auto k : kKinds) {
    const auto c = ScenarioConfig::make(k);
    EXPECT_EQ(reset(c, 42), reset(c, 42));
  }
  EXPECT_EQ(reset(ScenarioConfig::make(ScenarioKind::Straight), 1).npc_count(), 0u);
}

TEST(Reset, PedestrianOffsetIsFirstWorldDraw) {
  const auto c = ScenarioConfig::make(ScenarioKind::Pedestrian);
  for (std::uint64_t seed : {0ull, 7ull, 123456789ull}) {
    Rng replay(derive_seed(seed, Stream::World));
    const double offset = (replay.uniform01() - 0.5) * 2.0 * c.npcs[0].jitter;
    const auto w = reset(c, seed);
    EXPECT_DOUBLE_EQ(w.npc(0).position.x, c.npcs[0].path[0].x + offset);
    EXPECT_DOUBLE_EQ(w.npc(0).position.y, c.npcs[0].path[0].y);
  }
}

TEST(Step, AtRestCoastStaysPut) {
  const auto c = empty_road();
  auto w = reset(c, 0);
  const auto before = w.av().position;
  const auto r = step(w, {0.0, Longitudinal::Coast});
  EXPECT_EQ(w.av().position, before);
  EXPECT_FALSE(r.outcome.failure());
}

TEST(Step, TenMetersPerSecondAdvancesOneMeter) {
  auto c = empty_road();
  c.kinematics.drag = 0.0;
  c.av_spawn.speed = 10.0;
  auto w = reset(c, 0);
  const double x0 = w.av().position.x;
  step(w, {0.0, Longitudinal::Coast});
  EXPECT_DOUBLE_EQ(w.av().position.x - x0, 1.0);
  EXPECT_DOUBLE_EQ(w.av().speed, 10.0);
}

TEST(Step, UnicycleUpdateOrder) {
  auto c = empty_road();
  c.av_spawn = {{10.0, 0.0}, 0.3, 5.0};
  auto w = reset(c, 0);
  step(w, {0.5, Longitudinal::Throttle});
  EXPECT_DOUBLE_EQ(w.av().position.x, 10.0 + 5.0 * std::cos(0.3) * 0.1);
  EXPECT_DOUBLE_EQ(w.av().position.y, 5.0 * std::sin(0.3) * 0.1);
  EXPECT_DOUBLE_EQ(w.av().heading, 0.3 + 1.0 * 0.5 * 0.1);
  EXPECT_DOUBLE_EQ(w.av().speed, 5.0 + 2.0 * 0.1);
}

TEST(Step, SpeedClampedToBounds) {
  auto c = empty_road();
  c.av_spawn.speed = 14.95;
  auto w = reset(c, 0);
  step(w, {0.0, Longitudinal::Throttle});
  EXPECT_EQ(w.av().speed, 15.0);
  c.av_spawn.speed = 0.1;
  w = reset(c, 0);
  step(w, {0.0, Longitudinal::Brake});
  EXPECT_EQ(w.av().speed, 0.0);
}

TEST(Step, PedestrianContactIsTerminal) {
  auto c = ScenarioConfig::make(ScenarioKind::Pedestrian);
  c.npcs[0].jitter = 0.0;
  const Vec2 ped = c.npcs[0].path[0];
  c.av_spawn = {{ped.x - 1.2, ped.y}, 0.0, 0.0};
  auto w = reset(c, 0);
  const auto r = step(w, {0.0, Longitudinal::Coast});
  EXPECT_TRUE(r.outcome.cp);
  EXPECT_TRUE(r.outcome.terminal);
  EXPECT_THROW(step(w, {0.0, Longitudinal::Coast}), StateError);
}

TEST(Step, BudgetEndsEpisode) {
  auto c = empty_road();
  c.episode_steps = 3;
  auto w = reset(c, 0);
  EXPECT_FALSE(step(w, decode_action(4)).outcome.terminal);
  EXPECT_FALSE(step(w, decode_action(4)).outcome.terminal);
  EXPECT_TRUE(step(w, decode_action(4)).outcome.terminal);
}

TEST(Step, OverrideCountMustMatchRoster) {
  auto w = reset(ScenarioConfig::make(ScenarioKind::Pedestrian), 0);
  EXPECT_THROW(step(w, decode_action(4), std::vector<NpcCommand>(2)), DimensionError);
}

TEST(Step, DeterministicUnderActionAndOverrideSequences) {
  for (auto k : {ScenarioKind::Pedestrian, ScenarioKind::ThreeWay}) {
    const auto c = ScenarioConfig::make(k);
    auto a = reset(c, 9);
    auto b = reset(c, 9);
    Rng rng(5);
    for (int t = 0; t < 400 && !a.terminal; ++t) {
      const int act = static_cast<int>(rng.index(9));
      std::vector<NpcCommand> deltas(a.npc_count(), {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)});
      const auto ra = step(a, decode_action(act), deltas);
      const auto rb = step(b, decode_action(act), deltas);
      ASSERT_EQ(ra.outcome, rb.outcome);
      ASSERT_EQ(ra.observation, rb.observation);
      ASSERT_EQ(a, b);
    }
  }
}

TEST(Step, DisplacementBoundedByMaxSpeed) {
  for (auto k : kKinds) {
    const auto c = ScenarioConfig::make(k);
    auto w = reset(c, 3);
    Rng rng(17);
    while (!w.terminal) {
      const auto before = w.bodies;
      std::vector<NpcCommand> deltas(w.npc_count(), {rng.uniform(-50, 50), rng.uniform(-5, 5)});
      step(w, decode_action(static_cast<int>(rng.index(9))), deltas);
      for (std::size_t i = 0; i < before.size(); ++i) {
        const double moved = std::hypot(w.bodies[i].position.x - before[i].position.x,
                                        w.bodies[i].position.y - before[i].position.y);
        const double vmax = w.bodies[i].role == Role::NpcPedestrian ? c.kinematics.pedestrian_v_max : c.kinematics.v_max;
        ASSERT_LE(moved, vmax * c.dt + 1e-12);
      }
    }
  }
}

TEST(Step, MetricApplicabilityHoldsInRandomEpisodes) {
  for (auto k : kKinds) {
    const auto c = ScenarioConfig::make(k);
    const auto applicable = applicable_metrics(k);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto w = reset(c, seed);
      Rng rng(seed);
      while (!w.terminal) {
        const auto r = step(w, decode_action(static_cast<int>(rng.index(9))));
        if (!applicable.cv) ASSERT_FALSE(r.outcome.cv);
        if (!applicable.cp) ASSERT_FALSE(r.outcome.cp);
      }
    }
  }
}

TEST(Collision, BoundaryExteriorDoesNotCollide) {
  BodyState a{{0, 0}, 0, 0, 1.0, Role::AV};
  BodyState b{{2.01, 0}, 0, 0, 1.0, Role::NpcVehicle};
  EXPECT_FALSE(overlaps(a, b));
  b.position.x = 2.0;  // touching is not overlapping
  EXPECT_FALSE(overlaps(a, b));
  b.position.x = 1.99;
  EXPECT_TRUE(overlaps(a, b));
}

TEST(Collision, RoleRouting) {
  const std::vector<BodyState> bodies = {{{0, 0}, 0, 0, 1.0, Role::AV}, {{1.2, 0}, 0, 0, 0.5, Role::RoadObject}};
  EXPECT_EQ(detect_collisions(bodies), (CollisionFlags{false, true, false}));
}

TEST(Collision, SymmetricAndMatchesBruteForce) {
  Rng rng(77);
  static constexpr Role roles[] = {Role::NpcVehicle, Role::NpcPedestrian, Role::RoadObject};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<BodyState> bodies = {{{rng.uniform(-5, 5), rng.uniform(-5, 5)}, 0, 0, 1.0, Role::AV}};
    for (int i = 0; i < 9; ++i) {
      bodies.push_back({{rng.uniform(-5, 5), rng.uniform(-5, 5)}, 0, 0, rng.uniform(0.2, 1.0), roles[rng.index(3)]});
    }
    CollisionFlags oracle;
    for (std::size_t i = 1; i < bodies.size(); ++i) {
      const double dx = bodies[0].position.x - bodies[i].position.x;
      const double dy = bodies[0].position.y - bodies[i].position.y;
      const bool hit = std::sqrt(dx * dx + dy * dy) < bodies[0].radius + bodies[i].radius;
      ASSERT_EQ(overlaps(bodies[0], bodies[i]), overlaps(bodies[i], bodies[0]));
      if (!hit) continue;
      if (bodies[i].role == Role::NpcVehicle) oracle.cv = true;
      if (bodies[i].role == Role::NpcPedestrian) oracle.cp = true;
      if (bodies[i].role == Role::RoadObject) oracle.co = true;
    }
    ASSERT_EQ(detect_collisions(bodies), oracle);
  }
}

TEST(Offroad, CenterlineAndBoundary) {
  const auto c = ScenarioConfig::make(ScenarioKind::Straight);
  const double limit = c.lane_width / 2.0 - c.radii.av;
  EXPECT_FALSE(detect_offroad(c, {50.0, 0.0}));
  EXPECT_FALSE(detect_offroad(c, {50.0, limit}));
  EXPECT_TRUE(detect_offroad(c, {50.0, limit + 0.01}));
  EXPECT_TRUE(detect_offroad(c, {50.0, -limit - 0.01}));
}

TEST(Offroad, ThreeWayMatchesDenseSamplingOracle) {
  const auto c = ScenarioConfig::make(ScenarioKind::ThreeWay);
  const double limit = c.lane_width / 2.0 - c.radii.av;
  auto oracle = [&](Vec2 p) {
    double best = 1e300;
    for (const auto& lane : c.lanes) {
      for (std::size_t i = 1; i < lane.size(); ++i) {
        for (int s = 0; s <= 4000; ++s) {
          const double t = s / 4000.0;
          const double x = lane[i - 1].x + t * (lane[i].x - lane[i - 1].x);
          const double y = lane[i - 1].y + t * (lane[i].y - lane[i - 1].y);
          best = std::min(best, std::hypot(p.x - x, p.y - y));
        }
      }
    }
    return best;
  };
  Rng rng(4);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const Vec2 p{rng.uniform(-25, 10), rng.uniform(-25, 10)};
    const double d = oracle(p);
    if (std::abs(d - limit) < 0.02) continue;  // sampling resolution
    EXPECT_EQ(detect_offroad(c, p), d > limit) << p.x << "," << p.y;
    ++checked;
  }
  EXPECT_GT(checked, 250);
}

TEST(Reward, PaperCoefficients) {
  StepOutcome o;
  o.distance_delta = 1.0;
  o.forward_speed = 2.0;
  EXPECT_EQ(av_reward(o), 3.0);
  StepOutcome cv;
  cv.cv = true;
  EXPECT_EQ(av_reward(cv), -100.0);
  StepOutcome os;
  os.os = true;
  EXPECT_EQ(av_reward(os), -0.5);
  StepOutcome cp;
  cp.cp = true;
  EXPECT_EQ(av_reward(cp), -100.0);
}

TEST(Reward, LinearWithoutFlags) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    StepOutcome o;
    o.distance_delta = rng.uniform(-2, 2);
    o.forward_speed = rng.uniform(-15, 15);
    EXPECT_EQ(av_reward(o), o.distance_delta + o.forward_speed);
  }
}

TEST(Observe, CenterlineAlignedHasZeroErrors) {
  auto c = ScenarioConfig::make(ScenarioKind::Straight);
  c.av_spawn = {{20.0, 0.0}, 0.0, 3.0};
  const auto ob = observe(reset(c, 0));
  EXPECT_EQ(ob[obs::kHeadingError], 0.0);
  EXPECT_EQ(ob[obs::kLateralOffset], 0.0);
  EXPECT_EQ(ob[obs::kPedestrianDistance], obs::kSentinelDistance / obs::kDistanceScale);
  EXPECT_EQ(ob[obs::kVehicleDistance], obs::kSentinelDistance / obs::kDistanceScale);
  EXPECT_DOUBLE_EQ(ob[obs::kSpeed], 3.0 / 15.0);
}

TEST(Observe, PedestrianBearingMatchesAtan2) {
  auto c = ScenarioConfig::make(ScenarioKind::Pedestrian);
  c.npcs[0].jitter = 0.0;
  c.av_spawn = {{80.0, 1.0}, 0.4, 5.0};
  const auto w = reset(c, 0);
  const auto ob = observe(w);
  const Vec2 p = w.npc(0).position;
  double expected = std::atan2(p.y - 1.0, p.x - 80.0) - 0.4;
  expected = std::atan2(std::sin(expected), std::cos(expected));
  EXPECT_NEAR(ob[obs::kPedestrianBearing], expected / std::numbers::pi, 1e-12);
  EXPECT_NEAR(ob[obs::kPedestrianDistance], std::hypot(p.x - 80.0, p.y - 1.0) / 100.0, 1e-12);
}

TEST(Observe, FiniteThroughoutRandomEpisodes) {
  for (auto k : kKinds) {
    auto w = reset(ScenarioConfig::make(k), 1);
    Rng rng(1);
    while (!w.terminal) {
      const auto r = step(w, decode_action(static_cast<int>(rng.index(9))));
      for (double x : r.observation) ASSERT_TRUE(std::isfinite(x));
    }
  }
}

TEST(Npc, CommandDeltaClamps) {
  const Kinematics k;
  const auto ped = apply_command_delta({1.2, 0.0}, {0.0005, 0.7}, Role::NpcPedestrian, k);
  EXPECT_DOUBLE_EQ(ped.speed, 1.2005);
  EXPECT_EQ(ped.heading_rate, 0.0);
  EXPECT_EQ(apply_command_delta({14.9, 0.0}, {1.0, 0.0}, Role::NpcVehicle, k).speed, k.v_max);
  EXPECT_EQ(apply_command_delta({2.9, 0.0}, {1.0, 0.0}, Role::NpcPedestrian, k).speed, k.pedestrian_v_max);
  EXPECT_EQ(apply_command_delta({8.0, 0.0}, {0.0, 0.0}, Role::NpcVehicle, k), (NpcCommand{8.0, 0.0}));
}

TEST(Npc, PedestrianWaitsForTrigger) {
  auto c = ScenarioConfig::make(ScenarioKind::Pedestrian);
  auto w = reset(c, 0);
  const auto start = w.npc(0).position;
  step(w, decode_action(4));
  EXPECT_EQ(w.npc(0).position, start);  // AV is 100 m away
}

TEST(Trace, HeaderAndRows) {
  auto w = reset(ScenarioConfig::make(ScenarioKind::ThreeWay), 0);
  TraceRecorder rec;
  const auto r = step(w, decode_action(4));
  rec.record(w, r.outcome);
  std::ostringstream out;
  rec.write_csv(out);
  const auto text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), TraceRecorder::header());
  EXPECT_EQ(rec.rows.size(), 1 + w.npc_count());
}
