#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "remav/airl.hpp"
#include "remav/policy.hpp"
#include "remav/sim.hpp"
#include "remav/testing.hpp"

namespace remav::pipeline {

namespace fs = std::filesystem;

struct AvSection {
  policy::PpoHyper ppo;
  std::uint64_t seed = 1;
  bool shared_policy = false;
  std::map<sim::ScenarioKind, policy::PpoHyper> per_scenario;

  const policy::PpoHyper& hyper_for(sim::ScenarioKind kind) const;
};

struct CollectSection {
  int episodes = 50;
  int steps = 2000;
  std::uint64_t seed = 2;
  std::int64_t timestamp = 0;
};

struct AirlSection {
  airl::AirlHyper hyper;
  std::uint64_t seed = 3;
};

struct AnalyzeSection {
  int episodes = 20;
  int steps = 2000;
  std::uint64_t seed = 4;
};

struct TestSection {
  std::string mode = "remav";  // baseline, remav, rt, st or all
  testing::DisturbanceConfig disturbance;
  int episodes = 50;
  int steps = 1500;
  std::uint64_t seed = 5;
  int trace_episodes = 1;
};

struct RunConfig {
  nlohmann::json scenario_section;
  sim::ScenarioKind scenario = sim::ScenarioKind::Straight;
  AvSection av;
  CollectSection collect;
  AirlSection airl;
  AnalyzeSection analyze;
  TestSection test;
  fs::path workspace = "workspace";

  // Scenario geometry for `kind`. Geometry overrides in the scenario section
  // only apply to the section's own kind; dt, episode_steps, lane_width and
  // goal_margin apply to every kind.
  sim::ScenarioConfig scenario_config(sim::ScenarioKind kind) const;
};

// Every section is required; keys inside a section fall back to defaults.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const fs::path& path);

struct Overrides {
  std::optional<fs::path> workspace;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scenario;
  std::optional<std::string> mode;
  std::optional<std::string> noise;
  std::optional<int> episodes;
  bool force = false;
};

// Exclusive lock on a workspace for the lifetime of the object.
class WorkspaceLock {
 public:
  explicit WorkspaceLock(const fs::path& workspace);
  ~WorkspaceLock();
  WorkspaceLock(const WorkspaceLock&) = delete;
  WorkspaceLock& operator=(const WorkspaceLock&) = delete;

 private:
  fs::path path_;
};

struct StageResult {
  std::vector<fs::path> outputs;
  nlohmann::json summary;
};

StageResult cmd_train_av(const RunConfig& config, const Overrides& overrides);
StageResult cmd_collect(const RunConfig& config, const Overrides& overrides);
StageResult cmd_train_reward(const RunConfig& config, const Overrides& overrides);
StageResult cmd_analyze(const RunConfig& config, const Overrides& overrides);
StageResult cmd_test(const RunConfig& config, const Overrides& overrides);
StageResult cmd_report(const fs::path& workspace, bool force);

// Maps an exception to the CLI exit code: 1 validation, 2 missing or bad
// artifact, 3 anything else.
int exit_code_for(const std::exception& e);
nlohmann::json error_record(const std::exception& e);

// Minimal SVG renderings of a histogram CSV's counts and of a trace.
std::string histogram_svg(const std::vector<long>& counts, double lo, double hi, const std::string& title);
std::string trace_svg(const std::vector<std::vector<sim::Vec2>>& paths, const std::string& title);

}  // namespace remav::pipeline
