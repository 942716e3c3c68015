#include "remav/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "remav/error.hpp"

namespace remav::analysis {

using nlohmann::json;

Threshold threshold(std::span<const double> samples) {
  if (samples.empty()) throw ValidationError("threshold needs at least one sample");
  for (double x : samples) {
    if (!std::isfinite(x)) throw ValidationError("threshold samples must be finite");
  }
  const double n = static_cast<double>(samples.size());
  Threshold t;
  t.mu = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : samples) ss += (x - t.mu) * (x - t.mu);
  t.sigma = std::sqrt(ss / n);
  t.beta = t.mu - 2.0 * t.sigma;
  return t;
}

double Histogram::edge(int i) {
  return kHistogramLo + (kHistogramHi - kHistogramLo) * static_cast<double>(i) / kHistogramBins;
}

int Histogram::bin_of(double x) {
  if (!(x >= kHistogramLo && x <= kHistogramHi)) {
    throw ValidationError("histogram value " + std::to_string(x) + " outside [-17, 17]");
  }
  int i = static_cast<int>(std::floor((x - kHistogramLo) / (kHistogramHi - kHistogramLo) * kHistogramBins));
  // Floating rounding can put a value one bin off its edge; settle against the edges.
  if (i > 0 && x < edge(i)) --i;
  if (i < kHistogramBins - 1 && x >= edge(i + 1)) ++i;
  return std::clamp(i, 0, kHistogramBins - 1);
}

void Histogram::add(double x) { ++counts[static_cast<std::size_t>(bin_of(x))]; }

long Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), 0L); }

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw ValidationError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must lie in [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

std::vector<double> BehaviorProfile::values() const {
  std::vector<double> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.r_psi);
  return v;
}

void BehaviorProfile::finalize() {
  const auto v = values();
  stats = threshold(v);
  histogram = {};
  for (double x : v) histogram.add(x);
}

BehaviorProfile score_behavior(const policy::Policy& policy, const airl::RewardModel& model,
                               const sim::ScenarioConfig& scenario, int n_episodes, int steps_per_episode,
                               std::uint64_t seed) {
  if (model.scenario != scenario.kind) {
    throw ValidationError(std::string("reward model is for ") + sim::to_string(model.scenario) + ", scenario is " +
                          sim::to_string(scenario.kind));
  }
  if (n_episodes < 1 || steps_per_episode < 1) throw ValidationError("score_behavior needs episodes and steps >= 1");
  policy::Policy sampler = policy;
  sampler.mode = policy::ActionMode::Sample;
  BehaviorProfile profile;
  profile.scenario = scenario.kind;
  for (int e = 0; e < n_episodes; ++e) {
    const auto idx = static_cast<std::uint64_t>(e);
    auto world = sim::reset(scenario, derive_seed(seed, Stream::World, idx));
    Rng rng(derive_seed(seed, Stream::Action, idx));
    auto obs = sim::observe(world);
    for (int t = 0; t < steps_per_episode && !world.terminal; ++t) {
      const int action = policy::act(sampler, obs, rng).action;
      profile.samples.push_back({e, t, model.reward(obs, action)});
      obs = sim::step(world, sim::decode_action(action)).observation;
    }
  }
  profile.finalize();
  return profile;
}

Summary summarize(const BehaviorProfile& profile) {
  const auto v = profile.values();
  if (v.empty()) throw ValidationError("cannot summarize an empty profile");
  Summary s;
  const auto t = threshold(v);
  s.mu = t.mu;
  s.sigma = t.sigma;
  s.beta = t.beta;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  s.min = *lo;
  s.max = *hi;
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  s.count = v.size();
  return s;
}

void write_histogram_csv(std::ostream& out, const Histogram& histogram) {
  out.precision(17);
  out << "bin,lo,hi,count\n";
  for (int i = 0; i < kHistogramBins; ++i) {
    out << i << ',' << Histogram::edge(i) << ',' << Histogram::edge(i + 1) << ','
        << histogram.counts[static_cast<std::size_t>(i)] << '\n';
  }
}

void write_summary_csv(std::ostream& out, const Summary& s) {
  out.precision(17);
  out << "count,mu,sigma,beta,min,q1,median,q3,max\n";
  out << s.count << ',' << s.mu << ',' << s.sigma << ',' << s.beta << ',' << s.min << ',' << s.q1 << ','
      << s.median << ',' << s.q3 << ',' << s.max << '\n';
}

json to_json(const BehaviorProfile& p) {
  json samples = json::array();
  for (const auto& s : p.samples) samples.push_back({s.episode, s.step, s.r_psi});
  return {{"format", "remav-behavior-profile"},
          {"version", 1},
          {"scenario", sim::to_string(p.scenario)},
          {"mu", p.stats.mu},
          {"sigma", p.stats.sigma},
          {"beta", p.stats.beta},
          {"histogram", p.histogram.counts},
          {"samples", std::move(samples)}};
}

BehaviorProfile profile_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "remav-behavior-profile") throw FormatError("not a behavior profile");
    if (j.at("version").get<int>() != 1) throw VersionError("unsupported behavior profile version");
    BehaviorProfile p;
    p.scenario = sim::scenario_from_string(j.at("scenario").get<std::string>());
    for (const auto& s : j.at("samples")) p.samples.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<double>()});
    if (p.samples.empty()) throw FormatError("behavior profile has no samples");
    p.finalize();
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed behavior profile: ") + e.what());
  }
}

}  // namespace remav::analysis
