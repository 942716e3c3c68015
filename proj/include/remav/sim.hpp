#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace remav::sim {

enum class ScenarioKind { Straight, Pedestrian, ThreeWay };
enum class Role { AV, NpcVehicle, NpcPedestrian, RoadObject };

const char* to_string(ScenarioKind kind);
const char* to_string(Role role);
ScenarioKind scenario_from_string(const std::string& name);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

using Polyline = std::vector<Vec2>;

// Nearest point of a polyline to a query point.
struct Projection {
  double distance = 0.0;   // unsigned distance to the polyline
  double lateral = 0.0;    // signed, positive to the left of travel direction
  double arc = 0.0;        // arc length from the first vertex to the foot point
  double tangent = 0.0;    // heading of the segment containing the foot point
};

Projection project(const Polyline& line, Vec2 p);
double polyline_length(const Polyline& line);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

struct Kinematics {
  double steer_rate = 1.0;  // rad/s per unit normalized steer
  double accel = 2.0;       // m/s^2, Throttle
  double brake = 4.0;       // m/s^2, Brake
  double drag = 0.5;        // m/s^2, Coast
  double v_max = 15.0;      // AV and NPC vehicle speed bound
  double pedestrian_v_max = 3.0;
  double npc_heading_rate_max = 1.0;

  bool operator==(const Kinematics&) const = default;
};

struct Radii {
  double av = 1.0;
  double vehicle = 1.0;
  double pedestrian = 0.3;
  double road_object = 0.5;

  bool operator==(const Radii&) const = default;
};

// Scripted non-player agent. The path is translated by a seeded offset
// `(u - 0.5) * 2 * jitter` along `jitter_axis` at reset.
struct NpcSpec {
  Role role = Role::NpcVehicle;
  Polyline path;
  double spawn_arc = 0.0;
  double cruise_speed = 8.0;
  double jitter = 0.0;
  Vec2 jitter_axis{1.0, 0.0};
  double trigger_distance = 0.0;  // pedestrians start moving once the AV is this close

  bool operator==(const NpcSpec&) const = default;
};

struct Pose {
  Vec2 position;
  double heading = 0.0;
  double speed = 0.0;

  bool operator==(const Pose&) const = default;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Straight;
  double dt = 0.1;
  int episode_steps = 2000;
  double lane_width = 4.0;
  Polyline route;                 // the AV's intended path; goal is its end
  std::vector<Polyline> lanes;    // every lane centerline, route included
  Pose av_spawn;
  std::vector<NpcSpec> npcs;
  std::vector<Vec2> road_objects;
  std::optional<Vec2> intersection;
  double goal_margin = 5.0;
  Kinematics kinematics;
  Radii radii;
  // Vehicle NPC yielding: brake when the AV is ahead within this corridor.
  double yield_lookahead = 12.0;
  double yield_half_width = 3.0;

  // Default geometry for each scenario archetype.
  static ScenarioConfig make(ScenarioKind kind);

  // Throws ValidationError describing the first broken invariant.
  void validate() const;

  bool operator==(const ScenarioConfig&) const = default;
};

nlohmann::json to_json(const ScenarioConfig& config);
// Starts from ScenarioConfig::make(kind) and applies any overrides present.
ScenarioConfig scenario_from_json(const nlohmann::json& j);

struct BodyState {
  Vec2 position;
  double heading = 0.0;
  double speed = 0.0;
  double radius = 1.0;
  Role role = Role::AV;

  bool operator==(const BodyState&) const = default;
};

enum class Longitudinal { Brake, Coast, Throttle };

struct ActionCommand {
  double steer = 0.0;
  Longitudinal longitudinal = Longitudinal::Coast;

  bool operator==(const ActionCommand&) const = default;
};

inline constexpr int kActionCount = 9;

// index = 3 * steer_idx + long_idx, steer {-0.5, 0, +0.5}, long {Brake, Coast, Throttle}.
ActionCommand decode_action(int index);
int encode_action(const ActionCommand& command);

inline constexpr std::size_t kObservationSize = 12;
using Observation = std::array<double, kObservationSize>;

// Component layout of Observation.
namespace obs {
inline constexpr std::size_t kSpeed = 0;
inline constexpr std::size_t kHeadingError = 1;
inline constexpr std::size_t kLateralOffset = 2;
inline constexpr std::size_t kEdgeDistance = 3;
inline constexpr std::size_t kVehicleDistance = 4;
inline constexpr std::size_t kVehicleBearing = 5;
inline constexpr std::size_t kVehicleRelSpeed = 6;
inline constexpr std::size_t kPedestrianDistance = 7;
inline constexpr std::size_t kPedestrianBearing = 8;
inline constexpr std::size_t kGoalDistance = 9;
inline constexpr std::size_t kIntersectionDistance = 10;
inline constexpr std::size_t kProgress = 11;

inline constexpr double kSentinelDistance = 100.0;
inline constexpr double kDistanceScale = 100.0;
inline constexpr double kGoalScale = 200.0;
}  // namespace obs

struct StepOutcome {
  bool cv = false;
  bool co = false;
  bool cp = false;
  bool os = false;
  double distance_delta = 0.0;
  double forward_speed = 0.0;
  bool goal_reached = false;
  bool terminal = false;

  bool collision() const { return cv || co || cp; }
  bool failure() const { return collision() || os; }
  bool operator==(const StepOutcome&) const = default;
};

// Continuous command channels of one NPC for one step.
struct NpcCommand {
  double speed = 0.0;
  double heading_rate = 0.0;

  bool operator==(const NpcCommand&) const = default;
};

// Adds a delta to an NPC command and clamps to the role's physical bounds.
// Pedestrians only expose the speed channel.
NpcCommand apply_command_delta(const NpcCommand& command, const NpcCommand& delta, Role role,
                               const Kinematics& kinematics);

struct NpcRuntime {
  Polyline path;
  bool triggered = false;

  bool operator==(const NpcRuntime&) const = default;
};

// bodies[0] is the AV, bodies[1..npcs] the NPCs in roster order, then road objects.
struct WorldState {
  std::shared_ptr<const ScenarioConfig> config;
  std::vector<BodyState> bodies;
  std::vector<NpcRuntime> npcs;
  int step = 0;
  bool terminal = false;
  double route_arc = 0.0;

  const BodyState& av() const { return bodies.front(); }
  std::size_t npc_count() const { return npcs.size(); }
  const BodyState& npc(std::size_t i) const { return bodies[1 + i]; }

  bool operator==(const WorldState& other) const {
    return bodies == other.bodies && npcs == other.npcs && step == other.step &&
           terminal == other.terminal && route_arc == other.route_arc;
  }
};

// Pedestrian and vehicle spawn offsets are the first draws, in roster order,
// of Rng(derive_seed(seed, Stream::World)).uniform01().
WorldState reset(const ScenarioConfig& config, std::uint64_t seed);

struct StepResult {
  Observation observation{};
  StepOutcome outcome;
};

using NpcOverrides = std::optional<std::vector<NpcCommand>>;

// Scripted NPC commands for the current world (before any override).
std::vector<NpcCommand> scripted_npc_commands(const WorldState& world);

StepResult step(WorldState& world, const ActionCommand& av_action, const NpcOverrides& overrides = {});

struct CollisionFlags {
  bool cv = false;
  bool co = false;
  bool cp = false;
  bool operator==(const CollisionFlags&) const = default;
};

bool overlaps(const BodyState& a, const BodyState& b);
CollisionFlags detect_collisions(const WorldState& world);
CollisionFlags detect_collisions(std::span<const BodyState> bodies);

bool detect_offroad(const WorldState& world);
bool detect_offroad(const ScenarioConfig& config, Vec2 av_position);

inline constexpr double kAlphaDistance = 1.0;
inline constexpr double kAlphaSpeed = 1.0;
inline constexpr double kAlphaCollision = 100.0;
inline constexpr double kAlphaOffroad = 0.5;

// a1*dD + a2*Y - a3*(CV + CO + CP) - a4*OS
double av_reward(const StepOutcome& outcome);

Observation observe(const WorldState& world);

// Which per-step failure metrics a scenario can produce.
struct MetricApplicability {
  bool cv = false;
  bool co = true;
  bool cp = false;
  bool os = true;
};
MetricApplicability applicable_metrics(ScenarioKind kind);

// Top-down trace rows: step, body_id, role, x, y, heading, speed, cv, co, cp, os.
// Only the AV and NPCs are written.
struct TraceRecorder {
  std::vector<std::string> rows;
  void record(const WorldState& world, const StepOutcome& outcome);
  void write_csv(std::ostream& out) const;
  static const char* header();
};

}  // namespace remav::sim
