#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "remav/policy.hpp"
#include "remav/sim.hpp"

namespace remav::trajectory {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kFormatName = "remav-trajectories";

struct StepRecord {
  sim::Observation observation{};
  int action = 0;
  std::optional<double> reward_av;
  bool cv = false;
  bool co = false;
  bool cp = false;
  bool os = false;

  bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
  int episode = 0;
  sim::ScenarioKind scenario = sim::ScenarioKind::Straight;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;

  bool operator==(const Trajectory&) const = default;
};

struct Header {
  int version = kFormatVersion;
  sim::ScenarioKind scenario = sim::ScenarioKind::Straight;
  std::string policy_hash;
  std::int64_t timestamp = 0;  // caller supplied, so output stays reproducible

  bool operator==(const Header&) const = default;
};

struct TrajectorySet {
  Header header;
  std::vector<Trajectory> trajectories;

  std::size_t pair_count() const;
  // Throws ValidationError if any trajectory breaks the set invariants.
  void validate() const;
  bool operator==(const TrajectorySet&) const = default;
};

// SHA-256 of the policy's canonical JSON dump.
std::string policy_hash(const policy::Policy& policy);

// Rolls out n_episodes with the policy in Sample mode. Episode e uses world
// seed derive_seed(seed, World, e) and action seed derive_seed(seed, Action, e).
// Each step records (s_t, a_t) before the environment transition.
TrajectorySet collect(const policy::Policy& policy, const sim::ScenarioConfig& scenario, int n_episodes,
                      int steps_per_episode, std::uint64_t seed, std::int64_t timestamp = 0);

// JSON Lines: header, one trajectory per line, then {"crc32": "........"}
// over every byte before that line.
std::string serialize(const TrajectorySet& set);
TrajectorySet deserialize(const std::string& text);

void save(const TrajectorySet& set, const std::filesystem::path& path);
TrajectorySet load(const std::filesystem::path& path);

}  // namespace remav::trajectory
