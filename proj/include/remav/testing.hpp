#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "remav/airl.hpp"
#include "remav/policy.hpp"
#include "remav/rng.hpp"
#include "remav/sim.hpp"

namespace remav::testing {

enum class NoiseKind { Observation, NpcAction };

const char* to_string(NoiseKind kind);
NoiseKind noise_from_string(const std::string& name);

struct DisturbanceConfig {
  NoiseKind kind = NoiseKind::Observation;
  double sigma = 0.001;  // gaussian observation noise, mean 0
  double a = 0.0;        // uniform NPC command noise bounds [a, b)
  double b = 0.001;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DisturbanceConfig&) const = default;
};

// Box-Muller draws from the seeded generator.
std::vector<double> gaussian_noise(Rng& rng, std::size_t dim, double sigma);
double uniform_noise(Rng& rng, double a, double b);

sim::Observation perturb_observation(std::span<const double> obs, std::span<const double> noise);
sim::NpcCommand perturb_npc_action(const sim::NpcCommand& command, const sim::NpcCommand& noise, sim::Role role,
                                   const sim::Kinematics& kinematics);

enum class ModeKind { Baseline, ReMAV, RT, ST };

const char* to_string(ModeKind kind);
ModeKind mode_from_string(const std::string& name);

using Scorer = std::function<double(const sim::Observation&, int)>;

struct TestMode {
  ModeKind kind = ModeKind::Baseline;
  Scorer scorer;  // ReMAV only
  double beta = 0.0;
  std::optional<sim::ScenarioKind> model_scenario;

  static TestMode baseline();
  static TestMode rt();
  static TestMode st();
  static TestMode remav(std::shared_ptr<const airl::RewardModel> model, double beta);
  // Gate on an arbitrary scoring function, e.g. a scripted stand-in model.
  static TestMode remav(Scorer scorer, double beta);
};

struct StepRecord {
  bool cv = false;
  bool co = false;
  bool cp = false;
  bool os = false;
  bool perturbed = false;  // this step's input (or NPC commands) carried noise
  std::optional<double> r_psi;
  bool operator==(const StepRecord&) const = default;

  bool collision() const { return cv || co || cp; }
  bool failure() const { return collision() || os; }
};

struct EpisodeRecord {
  int episode = 0;
  std::vector<StepRecord> steps;
  std::optional<int> first_collision;
  std::optional<int> first_offroad;
  bool operator==(const EpisodeRecord&) const = default;

  // Sets first_collision / first_offroad from the step flags.
  void finalize();
};

struct RateStat {
  double mean = 0.0;
  double std = 0.0;  // population, across episodes
  bool operator==(const RateStat&) const = default;
};

struct Aggregates {
  std::optional<RateStat> cv;
  std::optional<RateStat> co;
  std::optional<RateStat> cp;
  std::optional<RateStat> os;
  std::optional<double> ttfc;  // seconds, over episodes with a collision
  int ttfc_never = 0;
  std::optional<double> ttfo;
  int ttfo_never = 0;
  bool operator==(const Aggregates&) const = default;
};

Aggregates compute_metrics(std::span<const EpisodeRecord> episodes, double dt,
                           const sim::MetricApplicability& applicable = {true, true, true, true});

struct Coverage {
  double perturbed_fraction = 0.0;
  double failure_fraction = 0.0;
  std::optional<double> failures_per_perturbation;
  bool operator==(const Coverage&) const = default;
};

Coverage coverage_stats(std::span<const EpisodeRecord> episodes);

struct TestReport {
  sim::ScenarioKind scenario = sim::ScenarioKind::Straight;
  ModeKind mode = ModeKind::Baseline;
  NoiseKind noise = NoiseKind::Observation;
  std::optional<double> beta;
  double dt = 0.1;
  std::vector<EpisodeRecord> episodes;
  Aggregates aggregates;
  Coverage coverage;
};

struct RunOptions {
  int trace_episodes = 0;  // record top-down traces for the first n episodes
};

struct RunOutput {
  TestReport report;
  std::vector<sim::TraceRecorder> traces;
};

// Seeds per episode e: world derive_seed(seed, World, e), policy actions
// derive_seed(seed, Action, e), the RT coin derive_seed(seed, Coin, e) and
// noise derive_seed(disturbance.seed ^ seed, Noise, e).
RunOutput run_test(const TestMode& mode, const policy::Policy& policy, const sim::ScenarioConfig& scenario,
                   const DisturbanceConfig& disturbance, int n_episodes, int steps, std::uint64_t seed,
                   const RunOptions& options = {});

nlohmann::json to_json(const TestReport& report);
TestReport report_from_json(const nlohmann::json& j);

const char* table_header();
// One row: scenario,mode,noise,CV,CO,CP,OS,TTFC,TTFO,perturbed_fraction,... ; absent values are empty.
std::string table_row(const TestReport& report);

}  // namespace remav::testing
