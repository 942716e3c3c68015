#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "remav/airl.hpp"
#include "remav/policy.hpp"
#include "remav/sim.hpp"

namespace remav::analysis {

struct Threshold {
  double mu = 0.0;
  double sigma = 0.0;  // population
  double beta = 0.0;   // mu - 2 sigma
};

Threshold threshold(std::span<const double> samples);

inline constexpr int kHistogramBins = 64;
inline constexpr double kHistogramLo = -17.0;
inline constexpr double kHistogramHi = 17.0;

// Right-open bins [lo, hi). The top edge 17 falls into the last bin.
struct Histogram {
  std::array<long, kHistogramBins> counts{};

  static double edge(int i);
  static int bin_of(double x);
  void add(double x);
  long total() const;
  bool operator==(const Histogram&) const = default;
};

// Linear interpolation between closest ranks: position q * (n - 1) of the sorted data.
double quantile(std::vector<double> samples, double q);

struct Sample {
  int episode = 0;
  int step = 0;
  double r_psi = 0.0;
  bool operator==(const Sample&) const = default;
};

struct BehaviorProfile {
  sim::ScenarioKind scenario = sim::ScenarioKind::Straight;
  std::vector<Sample> samples;
  Threshold stats;
  Histogram histogram;

  // Recomputes stats and histogram from samples.
  void finalize();
  std::vector<double> values() const;
  bool operator==(const BehaviorProfile& o) const {
    return scenario == o.scenario && samples == o.samples && histogram == o.histogram && stats.mu == o.stats.mu &&
           stats.sigma == o.stats.sigma && stats.beta == o.stats.beta;
  }
};

// Runs unperturbed Sample-mode episodes (seeds derived as in collect) and
// scores every visited (s, a) pair with the reward model.
BehaviorProfile score_behavior(const policy::Policy& policy, const airl::RewardModel& model,
                               const sim::ScenarioConfig& scenario, int n_episodes, int steps_per_episode,
                               std::uint64_t seed);

struct Summary {
  double mu = 0.0;
  double sigma = 0.0;
  double beta = 0.0;
  double min = 0.0;
  double max = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  std::size_t count = 0;
};

Summary summarize(const BehaviorProfile& profile);

void write_histogram_csv(std::ostream& out, const Histogram& histogram);
void write_summary_csv(std::ostream& out, const Summary& summary);

nlohmann::json to_json(const BehaviorProfile& profile);
BehaviorProfile profile_from_json(const nlohmann::json& j);

}  // namespace remav::analysis
