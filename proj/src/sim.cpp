#include "remav/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "remav/error.hpp"
#include "remav/rng.hpp"

namespace remav::sim {

namespace {

constexpr double kPi = std::numbers::pi;

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Road-edge posts from a to b (inclusive) every `spacing` meters.
void add_posts(std::vector<Vec2>& out, Vec2 a, Vec2 b, double spacing) {
  const double len = distance(a, b);
  const int n = static_cast<int>(std::floor(len / spacing + 1e-9));
  for (int i = 0; i <= n; ++i) {
    const double t = n == 0 ? 0.0 : static_cast<double>(i) / n;
    out.push_back({a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t});
  }
}

ScenarioConfig make_straight_road(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  c.route = {{0.0, 0.0}, {200.0, 0.0}};
  c.lanes = {c.route};
  c.av_spawn = {{5.0, 0.0}, 0.0, 0.0};
  const double edge = c.lane_width / 2.0 + 1.0;
  add_posts(c.road_objects, {0.0, edge}, {200.0, edge}, 2.0);
  add_posts(c.road_objects, {0.0, -edge}, {200.0, -edge}, 2.0);
  add_posts(c.road_objects, {-2.0, -edge}, {-2.0, edge}, 2.0);
  add_posts(c.road_objects, {202.0, -edge}, {202.0, edge}, 2.0);
  return c;
}

ScenarioConfig make_three_way() {
  ScenarioConfig c;
  c.kind = ScenarioKind::ThreeWay;
  const double half = c.lane_width / 2.0;  // lane centerline offset from road axis
  const double edge = c.lane_width;        // two-lane road edge
  const double post = edge + 1.0;

  c.route = {{half, -80.0}};
  // Left-turn arc from the northbound stem lane into the westbound lane.
  const double radius = 20.0;  // gentle enough to take at moderate speed
  const Vec2 center{half - radius, half - radius};
  for (int i = 0; i <= 12; ++i) {
    const double a = (kPi / 2.0) * i / 12.0;
    c.route.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  c.route.push_back({-100.0, half});

  c.lanes = {
      c.route,
      {{-100.0, -half}, {100.0, -half}},  // eastbound, crossed by the AV's turn
      {{100.0, half}, {-100.0, half}},    // westbound
      {{-half, -edge}, {-half, -80.0}},   // southbound stem
  };
  c.av_spawn = {{half, -75.0}, kPi / 2.0, 0.0};
  c.intersection = Vec2{0.0, 0.0};

  add_posts(c.road_objects, {-100.0, post}, {100.0, post}, 2.0);
  add_posts(c.road_objects, {-100.0, -post}, {-post, -post}, 2.0);
  add_posts(c.road_objects, {post, -post}, {100.0, -post}, 2.0);
  add_posts(c.road_objects, {-post, -post - 2.0}, {-post, -80.0}, 2.0);
  add_posts(c.road_objects, {post, -post - 2.0}, {post, -80.0}, 2.0);
  add_posts(c.road_objects, {-post, -82.0}, {post, -82.0}, 2.0);
  add_posts(c.road_objects, {-102.0, -post}, {-102.0, post}, 2.0);

  const Polyline eastbound{{-100.0, -half}, {100.0, -half}};
  NpcSpec first{Role::NpcVehicle, eastbound, 50.0, 8.0, 5.0, {1.0, 0.0}, 0.0};
  NpcSpec second{Role::NpcVehicle, eastbound, 20.0, 8.0, 5.0, {1.0, 0.0}, 0.0};
  c.npcs = {first, second};
  return c;
}

}  // namespace

const char* to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Straight: return "straight";
    case ScenarioKind::Pedestrian: return "pedestrian";
    case ScenarioKind::ThreeWay: return "threeway";
  }
  return "straight";
}

const char* to_string(Role role) {
  switch (role) {
    case Role::AV: return "av";
    case Role::NpcVehicle: return "npc_vehicle";
    case Role::NpcPedestrian: return "npc_pedestrian";
    case Role::RoadObject: return "road_object";
  }
  return "av";
}

ScenarioKind scenario_from_string(const std::string& name) {
  if (name == "straight") return ScenarioKind::Straight;
  if (name == "pedestrian") return ScenarioKind::Pedestrian;
  if (name == "threeway" || name == "three-way" || name == "three_way") return ScenarioKind::ThreeWay;
  throw ValidationError("unknown scenario kind '" + name + "' (expected straight|pedestrian|threeway)");
}

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

double polyline_length(const Polyline& line) {
  double total = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) total += distance(line[i - 1], line[i]);
  return total;
}

Projection project(const Polyline& line, Vec2 p) {
  Projection best;
  best.distance = std::numeric_limits<double>::infinity();
  double arc_before = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) {
    const Vec2 a = line[i - 1];
    const Vec2 b = line[i];
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    const double len = std::sqrt(len2);
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 foot{a.x + t * dx, a.y + t * dy};
    const double d = distance(p, foot);
    if (d < best.distance) {
      best.distance = d;
      best.arc = arc_before + t * len;
      best.tangent = std::atan2(dy, dx);
      const double cross = dx * (p.y - a.y) - dy * (p.x - a.x);
      best.lateral = cross >= 0.0 ? d : -d;
    }
    arc_before += len;
  }
  return best;
}

ScenarioConfig ScenarioConfig::make(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Straight:
      return make_straight_road(kind);
    case ScenarioKind::Pedestrian: {
      auto c = make_straight_road(kind);
      // Crossing at x = 100 from the right-hand road side to beyond the left edge.
      const double start = -(c.lane_width / 2.0 + 0.5);
      NpcSpec ped{Role::NpcPedestrian, {{100.0, start}, {100.0, c.lane_width / 2.0 + 1.0}},
                  0.0, 1.2, 5.0, {1.0, 0.0}, 30.0};
      c.npcs = {ped};
      return c;
    }
    case ScenarioKind::ThreeWay:
      return make_three_way();
  }
  return make_straight_road(kind);
}

void ScenarioConfig::validate() const {
  if (!(dt > 0.0)) throw ValidationError("scenario.dt must be positive");
  if (episode_steps <= 0) throw ValidationError("scenario.episode_steps must be positive");
  if (!(lane_width > 2.0 * radii.av)) throw ValidationError("scenario.lane_width must exceed the vehicle width");
  if (route.size() < 2) throw ValidationError("scenario.route needs at least two points");
  if (!(polyline_length(route) > goal_margin)) throw ValidationError("scenario.route is shorter than the goal margin");
  if (lanes.empty()) throw ValidationError("scenario.lanes must not be empty");
  for (const auto& lane : lanes) {
    if (lane.size() < 2) throw ValidationError("every lane centerline needs at least two points");
  }
  for (const auto& npc : npcs) {
    if (npc.path.size() < 2) throw ValidationError("every NPC path needs at least two points");
    if (npc.role != Role::NpcVehicle && npc.role != Role::NpcPedestrian) {
      throw ValidationError("NPC roster entries must be vehicles or pedestrians");
    }
    if (npc.cruise_speed < 0.0) throw ValidationError("NPC cruise speed must be non-negative");
  }
  const auto vehicles = std::count_if(npcs.begin(), npcs.end(), [](const NpcSpec& n) { return n.role == Role::NpcVehicle; });
  const auto pedestrians = std::count_if(npcs.begin(), npcs.end(), [](const NpcSpec& n) { return n.role == Role::NpcPedestrian; });
  switch (kind) {
    case ScenarioKind::Straight:
      if (!npcs.empty()) throw ValidationError("straight scenario must have zero NPCs");
      break;
    case ScenarioKind::Pedestrian:
      if (pedestrians != 1 || vehicles != 0) {
        throw ValidationError("pedestrian scenario needs exactly one pedestrian and no vehicle NPCs");
      }
      break;
    case ScenarioKind::ThreeWay:
      if (vehicles < 1 || pedestrians != 0) {
        throw ValidationError("three-way scenario needs at least one vehicle NPC and no pedestrians");
      }
      break;
  }
  if (radii.av <= 0 || radii.vehicle <= 0 || radii.pedestrian <= 0 || radii.road_object <= 0) {
    throw ValidationError("body radii must be positive");
  }
}

namespace {

nlohmann::json polyline_json(const Polyline& line) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : line) out.push_back({p.x, p.y});
  return out;
}

Polyline polyline_from(const nlohmann::json& j) {
  Polyline line;
  for (const auto& p : j) line.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return line;
}

Role role_from_string(const std::string& name) {
  if (name == "npc_vehicle") return Role::NpcVehicle;
  if (name == "npc_pedestrian") return Role::NpcPedestrian;
  throw ValidationError("unknown NPC role '" + name + "'");
}

}  // namespace

nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json lanes = nlohmann::json::array();
  for (const auto& lane : c.lanes) lanes.push_back(polyline_json(lane));
  nlohmann::json npcs = nlohmann::json::array();
  for (const auto& n : c.npcs) {
    npcs.push_back({{"role", to_string(n.role)},
                    {"path", polyline_json(n.path)},
                    {"spawn_arc", n.spawn_arc},
                    {"cruise_speed", n.cruise_speed},
                    {"jitter", n.jitter},
                    {"jitter_axis", {n.jitter_axis.x, n.jitter_axis.y}},
                    {"trigger_distance", n.trigger_distance}});
  }
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& p : c.road_objects) objects.push_back({p.x, p.y});
  nlohmann::json j{{"kind", to_string(c.kind)},
                   {"dt", c.dt},
                   {"episode_steps", c.episode_steps},
                   {"lane_width", c.lane_width},
                   {"route", polyline_json(c.route)},
                   {"lanes", lanes},
                   {"av_spawn", {{"x", c.av_spawn.position.x}, {"y", c.av_spawn.position.y},
                                 {"heading", c.av_spawn.heading}, {"speed", c.av_spawn.speed}}},
                   {"npcs", npcs},
                   {"road_objects", objects},
                   {"goal_margin", c.goal_margin}};
  if (c.intersection) j["intersection"] = {c.intersection->x, c.intersection->y};
  return j;
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  if (!j.contains("kind")) throw ValidationError("scenario.kind is required");
  auto c = ScenarioConfig::make(scenario_from_string(j.at("kind").get<std::string>()));
  try {
    if (j.contains("dt")) c.dt = j.at("dt").get<double>();
    if (j.contains("episode_steps")) c.episode_steps = j.at("episode_steps").get<int>();
    if (j.contains("lane_width")) c.lane_width = j.at("lane_width").get<double>();
    if (j.contains("route")) c.route = polyline_from(j.at("route"));
    if (j.contains("lanes")) {
      c.lanes.clear();
      for (const auto& lane : j.at("lanes")) c.lanes.push_back(polyline_from(lane));
    }
    if (j.contains("av_spawn")) {
      const auto& s = j.at("av_spawn");
      c.av_spawn = {{s.value("x", c.av_spawn.position.x), s.value("y", c.av_spawn.position.y)},
                    s.value("heading", c.av_spawn.heading), s.value("speed", c.av_spawn.speed)};
    }
    if (j.contains("npcs")) {
      c.npcs.clear();
      for (const auto& n : j.at("npcs")) {
        NpcSpec spec;
        spec.role = role_from_string(n.at("role").get<std::string>());
        spec.path = polyline_from(n.at("path"));
        spec.spawn_arc = n.value("spawn_arc", 0.0);
        spec.cruise_speed = n.value("cruise_speed", 8.0);
        spec.jitter = n.value("jitter", 0.0);
        if (n.contains("jitter_axis")) spec.jitter_axis = {n["jitter_axis"].at(0), n["jitter_axis"].at(1)};
        spec.trigger_distance = n.value("trigger_distance", 0.0);
        c.npcs.push_back(spec);
      }
    }
    if (j.contains("road_objects")) {
      c.road_objects.clear();
      for (const auto& p : j.at("road_objects")) c.road_objects.push_back({p.at(0), p.at(1)});
    }
    if (j.contains("intersection")) {
      const auto& p = j.at("intersection");
      if (p.is_null()) c.intersection.reset();
      else c.intersection = Vec2{p.at(0), p.at(1)};
    }
    if (j.contains("goal_margin")) c.goal_margin = j.at("goal_margin").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed scenario section: ") + e.what());
  }
  c.validate();
  return c;
}

ActionCommand decode_action(int index) {
  if (index < 0 || index >= kActionCount) {
    throw ValidationError("action index " + std::to_string(index) + " out of range 0..8");
  }
  static constexpr double kSteer[3] = {-0.5, 0.0, 0.5};
  static constexpr Longitudinal kLong[3] = {Longitudinal::Brake, Longitudinal::Coast, Longitudinal::Throttle};
  return {kSteer[index / 3], kLong[index % 3]};
}

int encode_action(const ActionCommand& command) {
  int steer_idx = command.steer < 0.0 ? 0 : (command.steer > 0.0 ? 2 : 1);
  return 3 * steer_idx + static_cast<int>(command.longitudinal);
}

NpcCommand apply_command_delta(const NpcCommand& command, const NpcCommand& delta, Role role,
                               const Kinematics& k) {
  NpcCommand out = command;
  if (role == Role::NpcPedestrian) {
    out.speed = std::clamp(command.speed + delta.speed, 0.0, k.pedestrian_v_max);
    return out;
  }
  out.speed = std::clamp(command.speed + delta.speed, 0.0, k.v_max);
  out.heading_rate = std::clamp(command.heading_rate + delta.heading_rate, -k.npc_heading_rate_max,
                                k.npc_heading_rate_max);
  return out;
}

WorldState reset(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  WorldState w;
  w.config = std::make_shared<const ScenarioConfig>(config);
  Rng rng(derive_seed(seed, Stream::World));

  w.bodies.push_back({config.av_spawn.position, config.av_spawn.heading, config.av_spawn.speed,
                      config.radii.av, Role::AV});
  for (const auto& spec : config.npcs) {
    const double offset = (rng.uniform01() - 0.5) * 2.0 * spec.jitter;
    NpcRuntime rt;
    for (const auto& p : spec.path) {
      rt.path.push_back({p.x + offset * spec.jitter_axis.x, p.y + offset * spec.jitter_axis.y});
    }
    // Spawn at spawn_arc along the (translated) path.
    double remaining = spec.spawn_arc;
    Vec2 pos = rt.path.front();
    double heading = std::atan2(rt.path[1].y - rt.path[0].y, rt.path[1].x - rt.path[0].x);
    for (std::size_t i = 1; i < rt.path.size(); ++i) {
      const double seg = distance(rt.path[i - 1], rt.path[i]);
      heading = std::atan2(rt.path[i].y - rt.path[i - 1].y, rt.path[i].x - rt.path[i - 1].x);
      if (remaining <= seg || i + 1 == rt.path.size()) {
        const double t = seg > 0.0 ? std::min(remaining, seg) / seg : 0.0;
        pos = {rt.path[i - 1].x + t * (rt.path[i].x - rt.path[i - 1].x),
               rt.path[i - 1].y + t * (rt.path[i].y - rt.path[i - 1].y)};
        break;
      }
      remaining -= seg;
    }
    const bool pedestrian = spec.role == Role::NpcPedestrian;
    const double radius = pedestrian ? config.radii.pedestrian : config.radii.vehicle;
    const double speed = pedestrian ? 0.0 : spec.cruise_speed;
    w.bodies.push_back({pos, heading, speed, radius, spec.role});
    w.npcs.push_back(std::move(rt));
  }
  for (const auto& p : config.road_objects) {
    w.bodies.push_back({p, 0.0, 0.0, config.radii.road_object, Role::RoadObject});
  }
  w.route_arc = project(config.route, config.av_spawn.position).arc;
  return w;
}

std::vector<NpcCommand> scripted_npc_commands(const WorldState& world) {
  const auto& c = *world.config;
  const auto& k = c.kinematics;
  std::vector<NpcCommand> commands;
  commands.reserve(world.npcs.size());
  const BodyState& av = world.av();
  for (std::size_t i = 0; i < world.npcs.size(); ++i) {
    const auto& spec = c.npcs[i];
    const auto& rt = world.npcs[i];
    const BodyState& body = world.npc(i);
    const Projection proj = project(rt.path, body.position);
    const bool at_end = proj.arc >= polyline_length(rt.path) - 1e-9;
    NpcCommand cmd;
    if (spec.role == Role::NpcPedestrian) {
      const bool walking = rt.triggered || distance(av.position, body.position) <= spec.trigger_distance;
      cmd.speed = walking && !at_end ? spec.cruise_speed : 0.0;
      cmd.heading_rate = 0.0;
    } else {
      // Yield when the AV sits in the lane corridor just ahead.
      const double dx = av.position.x - body.position.x;
      const double dy = av.position.y - body.position.y;
      const double ahead = dx * std::cos(body.heading) + dy * std::sin(body.heading);
      const double side = -dx * std::sin(body.heading) + dy * std::cos(body.heading);
      const bool yield = ahead > 0.0 && ahead < c.yield_lookahead && std::abs(side) < c.yield_half_width;
      const double target = (yield || at_end) ? 0.0 : spec.cruise_speed;
      if (body.speed > target) cmd.speed = std::max(target, body.speed - k.brake * c.dt);
      else cmd.speed = std::min(target, body.speed + k.accel * c.dt);
      // Lane keeping toward the path centerline.
      const double heading_error = wrap_angle(proj.tangent - body.heading);
      cmd.heading_rate = std::clamp(2.0 * heading_error - 0.5 * proj.lateral, -k.npc_heading_rate_max,
                                    k.npc_heading_rate_max);
      cmd = apply_command_delta(cmd, {}, spec.role, k);
    }
    commands.push_back(cmd);
  }
  return commands;
}

bool overlaps(const BodyState& a, const BodyState& b) {
  return distance(a.position, b.position) < a.radius + b.radius;
}

CollisionFlags detect_collisions(std::span<const BodyState> bodies) {
  CollisionFlags flags;
  if (bodies.empty()) return flags;
  const BodyState& av = bodies.front();
  for (std::size_t i = 1; i < bodies.size(); ++i) {
    const BodyState& other = bodies[i];
    if (!overlaps(av, other)) continue;
    switch (other.role) {
      case Role::NpcVehicle: flags.cv = true; break;
      case Role::NpcPedestrian: flags.cp = true; break;
      case Role::RoadObject: flags.co = true; break;
      case Role::AV: break;
    }
  }
  return flags;
}

CollisionFlags detect_collisions(const WorldState& world) { return detect_collisions(world.bodies); }

bool detect_offroad(const ScenarioConfig& config, Vec2 av_position) {
  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& lane : config.lanes) nearest = std::min(nearest, project(lane, av_position).distance);
  return nearest > config.lane_width / 2.0 - config.radii.av;
}

bool detect_offroad(const WorldState& world) { return detect_offroad(*world.config, world.av().position); }

double av_reward(const StepOutcome& o) {
  const double collisions = (o.cv ? 1.0 : 0.0) + (o.co ? 1.0 : 0.0) + (o.cp ? 1.0 : 0.0);
  return kAlphaDistance * o.distance_delta + kAlphaSpeed * o.forward_speed - kAlphaCollision * collisions -
         kAlphaOffroad * (o.os ? 1.0 : 0.0);
}

StepResult step(WorldState& world, const ActionCommand& av_action, const NpcOverrides& overrides) {
  if (world.terminal) throw StateError("step called on a terminal world");
  const auto& c = *world.config;
  const auto& k = c.kinematics;
  if (overrides && overrides->size() != world.npcs.size()) {
    throw DimensionError("npc overrides", world.npcs.size(), overrides->size());
  }

  auto commands = scripted_npc_commands(world);
  if (overrides) {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      commands[i] = apply_command_delta(commands[i], (*overrides)[i], c.npcs[i].role, k);
    }
  }

  // AV unicycle: move with the current speed and heading, then update both.
  BodyState& av = world.bodies.front();
  av.position.x += av.speed * std::cos(av.heading) * c.dt;
  av.position.y += av.speed * std::sin(av.heading) * c.dt;
  av.heading = wrap_angle(av.heading + k.steer_rate * av_action.steer * c.dt);
  switch (av_action.longitudinal) {
    case Longitudinal::Throttle: av.speed += k.accel * c.dt; break;
    case Longitudinal::Brake: av.speed -= k.brake * c.dt; break;
    case Longitudinal::Coast: av.speed -= k.drag * c.dt; break;
  }
  av.speed = std::clamp(av.speed, 0.0, k.v_max);

  for (std::size_t i = 0; i < world.npcs.size(); ++i) {
    BodyState& body = world.bodies[1 + i];
    const double prior_distance = distance(world.bodies.front().position, body.position);
    if (c.npcs[i].role == Role::NpcPedestrian && !world.npcs[i].triggered &&
        prior_distance <= c.npcs[i].trigger_distance) {
      world.npcs[i].triggered = true;
    }
    body.speed = commands[i].speed;
    body.position.x += body.speed * std::cos(body.heading) * c.dt;
    body.position.y += body.speed * std::sin(body.heading) * c.dt;
    body.heading = wrap_angle(body.heading + commands[i].heading_rate * c.dt);
  }

  ++world.step;

  StepResult result;
  auto& out = result.outcome;
  const auto flags = detect_collisions(world);
  out.cv = flags.cv;
  out.co = flags.co;
  out.cp = flags.cp;
  out.os = detect_offroad(world);

  const Projection route = project(c.route, av.position);
  out.distance_delta = route.arc - world.route_arc;
  world.route_arc = route.arc;
  out.forward_speed = av.speed * std::cos(wrap_angle(av.heading - route.tangent));
  out.goal_reached = route.arc >= polyline_length(c.route) - c.goal_margin;
  out.terminal = out.collision() || out.goal_reached || world.step >= c.episode_steps;
  world.terminal = out.terminal;

  result.observation = observe(world);
  return result;
}

Observation observe(const WorldState& world) {
  namespace o = obs;
  const auto& c = *world.config;
  const BodyState& av = world.av();
  Observation ob{};

  const Projection route = project(c.route, av.position);
  const double half = c.lane_width / 2.0;
  ob[o::kSpeed] = av.speed / c.kinematics.v_max;
  ob[o::kHeadingError] = wrap_angle(av.heading - route.tangent) / kPi;
  ob[o::kLateralOffset] = route.lateral / half;

  double nearest_lane = std::numeric_limits<double>::infinity();
  for (const auto& lane : c.lanes) nearest_lane = std::min(nearest_lane, project(lane, av.position).distance);
  ob[o::kEdgeDistance] = (half - c.radii.av - nearest_lane) / half;

  auto relative = [&](const BodyState& b) {
    const double d = std::min(distance(av.position, b.position), o::kSentinelDistance);
    const double bearing = wrap_angle(std::atan2(b.position.y - av.position.y, b.position.x - av.position.x) - av.heading);
    return std::pair{d, bearing};
  };

  double vehicle_distance = o::kSentinelDistance;
  double vehicle_bearing = 0.0;
  double vehicle_rel_speed = 0.0;
  double pedestrian_distance = o::kSentinelDistance;
  double pedestrian_bearing = 0.0;
  double best_vehicle = std::numeric_limits<double>::infinity();
  double best_pedestrian = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < world.npcs.size(); ++i) {
    const BodyState& b = world.npc(i);
    const double raw = distance(av.position, b.position);
    const auto [d, bearing] = relative(b);
    if (b.role == Role::NpcVehicle && raw < best_vehicle) {
      best_vehicle = raw;
      vehicle_distance = d;
      vehicle_bearing = bearing;
      vehicle_rel_speed = b.speed * std::cos(b.heading - av.heading) - av.speed;
    } else if (b.role == Role::NpcPedestrian && raw < best_pedestrian) {
      best_pedestrian = raw;
      pedestrian_distance = d;
      pedestrian_bearing = bearing;
    }
  }
  ob[o::kVehicleDistance] = vehicle_distance / o::kDistanceScale;
  ob[o::kVehicleBearing] = vehicle_bearing / kPi;
  ob[o::kVehicleRelSpeed] = vehicle_rel_speed / c.kinematics.v_max;
  ob[o::kPedestrianDistance] = pedestrian_distance / o::kDistanceScale;
  ob[o::kPedestrianBearing] = pedestrian_bearing / kPi;

  const double to_goal = std::max(0.0, polyline_length(c.route) - route.arc);
  ob[o::kGoalDistance] = to_goal / o::kGoalScale;
  const double to_intersection =
      c.intersection ? std::min(distance(av.position, *c.intersection), o::kSentinelDistance) : o::kSentinelDistance;
  ob[o::kIntersectionDistance] = to_intersection / o::kDistanceScale;
  ob[o::kProgress] = static_cast<double>(world.step) / static_cast<double>(c.episode_steps);
  return ob;
}

MetricApplicability applicable_metrics(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Straight: return {false, true, false, true};
    case ScenarioKind::Pedestrian: return {false, true, true, true};
    case ScenarioKind::ThreeWay: return {true, true, false, true};
  }
  return {};
}

const char* TraceRecorder::header() { return "step,body_id,role,x,y,heading,speed,cv,co,cp,os"; }

void TraceRecorder::record(const WorldState& world, const StepOutcome& outcome) {
  const std::size_t dynamic = 1 + world.npc_count();
  for (std::size_t id = 0; id < dynamic; ++id) {
    const auto& b = world.bodies[id];
    std::ostringstream row;
    row.precision(17);
    row << world.step << ',' << id << ',' << to_string(b.role) << ',' << b.position.x << ',' << b.position.y
        << ',' << b.heading << ',' << b.speed << ',' << outcome.cv << ',' << outcome.co << ',' << outcome.cp
        << ',' << outcome.os;
    rows.push_back(row.str());
  }
}

void TraceRecorder::write_csv(std::ostream& out) const {
  out << header() << '\n';
  for (const auto& r : rows) out << r << '\n';
}

}  // namespace remav::sim
