#include "remav/trajectory.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "remav/error.hpp"
#include "remav/hash.hpp"

namespace remav::trajectory {

using nlohmann::json;

std::size_t TrajectorySet::pair_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.steps.size();
  return n;
}

void TrajectorySet::validate() const {
  for (const auto& t : trajectories) {
    if (t.scenario != header.scenario) {
      throw ValidationError("trajectory " + std::to_string(t.episode) + " is for scenario " +
                            sim::to_string(t.scenario) + ", set is " + sim::to_string(header.scenario));
    }
    for (const auto& s : t.steps) {
      if (s.action < 0 || s.action >= sim::kActionCount) {
        throw ValidationError("trajectory " + std::to_string(t.episode) + " has action " + std::to_string(s.action));
      }
      for (double x : s.observation) {
        if (!std::isfinite(x)) {
          throw ValidationError("trajectory " + std::to_string(t.episode) + " has a non-finite observation");
        }
      }
    }
  }
}

std::string policy_hash(const policy::Policy& policy) { return sha256_hex(policy::to_json(policy).dump()); }

TrajectorySet collect(const policy::Policy& policy, const sim::ScenarioConfig& scenario, int n_episodes,
                      int steps_per_episode, std::uint64_t seed, std::int64_t timestamp) {
  if (n_episodes < 1) throw ValidationError("collect needs n_episodes >= 1");
  if (steps_per_episode < 1) throw ValidationError("collect needs steps_per_episode >= 1");
  scenario.validate();

  policy::Policy sampler = policy;
  sampler.mode = policy::ActionMode::Sample;

  TrajectorySet set;
  set.header.scenario = scenario.kind;
  set.header.policy_hash = policy_hash(policy);
  set.header.timestamp = timestamp;
  for (int e = 0; e < n_episodes; ++e) {
    const auto idx = static_cast<std::uint64_t>(e);
    Trajectory traj;
    traj.episode = e;
    traj.scenario = scenario.kind;
    traj.seed = derive_seed(seed, Stream::World, idx);
    auto world = sim::reset(scenario, traj.seed);
    Rng rng(derive_seed(seed, Stream::Action, idx));
    auto obs = sim::observe(world);
    for (int t = 0; t < steps_per_episode && !world.terminal; ++t) {
      StepRecord rec;
      rec.observation = obs;
      rec.action = policy::act(sampler, obs, rng).action;
      const auto res = sim::step(world, sim::decode_action(rec.action));
      rec.reward_av = sim::av_reward(res.outcome);
      rec.cv = res.outcome.cv;
      rec.co = res.outcome.co;
      rec.cp = res.outcome.cp;
      rec.os = res.outcome.os;
      traj.steps.push_back(rec);
      obs = res.observation;
    }
    set.trajectories.push_back(std::move(traj));
  }
  return set;
}

namespace {

json header_json(const Header& h, std::size_t count) {
  return {{"format", kFormatName},     {"version", h.version},     {"scenario", sim::to_string(h.scenario)},
          {"policy_hash", h.policy_hash}, {"timestamp", h.timestamp}, {"count", count}};
}

// Flags pack as a bitmask: cv=1, co=2, cp=4, os=8.
int pack_flags(const StepRecord& s) { return (s.cv ? 1 : 0) | (s.co ? 2 : 0) | (s.cp ? 4 : 0) | (s.os ? 8 : 0); }

json trajectory_json(const Trajectory& t) {
  json steps = json::array();
  for (const auto& s : t.steps) {
    json rec = {{"obs", s.observation}, {"action", s.action}, {"flags", pack_flags(s)}};
    if (s.reward_av) rec["reward"] = *s.reward_av;
    steps.push_back(std::move(rec));
  }
  return {{"episode", t.episode}, {"scenario", sim::to_string(t.scenario)}, {"seed", t.seed}, {"steps", std::move(steps)}};
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  t.episode = j.at("episode").get<int>();
  t.scenario = sim::scenario_from_string(j.at("scenario").get<std::string>());
  t.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& rec : j.at("steps")) {
    StepRecord s;
    const auto& obs = rec.at("obs");
    if (obs.size() != sim::kObservationSize) throw DimensionError("stored observation", sim::kObservationSize, obs.size());
    for (std::size_t i = 0; i < sim::kObservationSize; ++i) s.observation[i] = obs[i].get<double>();
    s.action = rec.at("action").get<int>();
    const int flags = rec.at("flags").get<int>();
    s.cv = flags & 1;
    s.co = flags & 2;
    s.cp = flags & 4;
    s.os = flags & 8;
    if (rec.contains("reward")) s.reward_av = rec["reward"].get<double>();
    t.steps.push_back(std::move(s));
  }
  return t;
}

std::string crc_line(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return json{{"crc32", buf}}.dump();
}

}  // namespace

std::string serialize(const TrajectorySet& set) {
  std::string payload = header_json(set.header, set.trajectories.size()).dump();
  payload += '\n';
  for (const auto& t : set.trajectories) {
    payload += trajectory_json(t).dump();
    payload += '\n';
  }
  return payload + crc_line(crc32(payload)) + '\n';
}

TrajectorySet deserialize(const std::string& text) {
  if (text.empty() || text.back() != '\n') throw TruncatedError("trajectory file does not end with a newline");
  const auto last_start = text.rfind('\n', text.size() - 2);
  if (last_start == std::string::npos) throw TruncatedError("trajectory file has no checksum line");
  const std::string payload = text.substr(0, last_start + 1);
  const std::string tail = text.substr(last_start + 1, text.size() - last_start - 2);

  json crc_record = json::parse(tail, nullptr, false);
  if (crc_record.is_discarded() || !crc_record.is_object() || !crc_record.contains("crc32")) {
    throw TruncatedError("trajectory file is missing its trailing checksum line");
  }
  const std::string expected = crc_line(crc32(payload));
  if (tail != expected) {
    throw ChecksumError("trajectory checksum mismatch: stored " + crc_record["crc32"].dump() + ", computed " +
                        json::parse(expected)["crc32"].dump());
  }

  std::istringstream in(payload);
  std::string line;
  std::getline(in, line);
  TrajectorySet set;
  try {
    const json h = json::parse(line);
    if (h.at("format").get<std::string>() != kFormatName) throw FormatError("not a trajectory file");
    set.header.version = h.at("version").get<int>();
    if (set.header.version != kFormatVersion) {
      throw VersionError("trajectory format version " + std::to_string(set.header.version) + ", expected " +
                         std::to_string(kFormatVersion));
    }
    set.header.scenario = sim::scenario_from_string(h.at("scenario").get<std::string>());
    set.header.policy_hash = h.at("policy_hash").get<std::string>();
    set.header.timestamp = h.at("timestamp").get<std::int64_t>();
    const auto count = h.at("count").get<std::size_t>();
    while (std::getline(in, line)) set.trajectories.push_back(trajectory_from_json(json::parse(line)));
    if (set.trajectories.size() != count) {
      throw TruncatedError("trajectory file holds " + std::to_string(set.trajectories.size()) + " of " +
                           std::to_string(count) + " trajectories");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed trajectory file: ") + e.what());
  }
  set.validate();
  return set;
}

void save(const TrajectorySet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << serialize(set);
  if (!out) throw Error("write failed for " + path.string());
}

TrajectorySet load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open trajectory file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace remav::trajectory
