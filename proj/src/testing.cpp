#include "remav/testing.hpp"

#include <cmath>
#include <ostream>

#include "remav/error.hpp"

namespace remav::testing {

using nlohmann::json;

const char* to_string(NoiseKind kind) { return kind == NoiseKind::Observation ? "obs" : "npc"; }

NoiseKind noise_from_string(const std::string& name) {
  if (name == "obs") return NoiseKind::Observation;
  if (name == "npc") return NoiseKind::NpcAction;
  throw ValidationError("unknown noise kind '" + name + "' (expected obs or npc)");
}

void DisturbanceConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("disturbance sigma must be finite and >= 0");
  if (!(a <= b) || !std::isfinite(a) || !std::isfinite(b)) throw ValidationError("disturbance bounds need a <= b");
}

std::vector<double> gaussian_noise(Rng& rng, std::size_t dim, double sigma) {
  if (!(sigma >= 0.0)) throw ValidationError("gaussian sigma must be >= 0");
  std::vector<double> out(dim);
  for (double& x : out) x = rng.normal(0.0, sigma);
  return out;
}

double uniform_noise(Rng& rng, double a, double b) {
  if (!(a <= b)) throw ValidationError("uniform noise needs a <= b");
  if (a == b) return a;
  const double x = rng.uniform(a, b);
  // a + (b - a) * u can round up to b for u just below 1.
  return x < b ? x : std::nextafter(b, a);
}

sim::Observation perturb_observation(std::span<const double> obs, std::span<const double> noise) {
  if (obs.size() != sim::kObservationSize) throw DimensionError("observation", sim::kObservationSize, obs.size());
  if (noise.size() != obs.size()) throw DimensionError("observation noise", obs.size(), noise.size());
  sim::Observation out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = obs[i] + noise[i];
  return out;
}

sim::NpcCommand perturb_npc_action(const sim::NpcCommand& command, const sim::NpcCommand& noise, sim::Role role,
                                   const sim::Kinematics& kinematics) {
  return sim::apply_command_delta(command, noise, role, kinematics);
}

const char* to_string(ModeKind kind) {
  switch (kind) {
    case ModeKind::Baseline: return "baseline";
    case ModeKind::ReMAV: return "remav";
    case ModeKind::RT: return "rt";
    case ModeKind::ST: return "st";
  }
  return "?";
}

ModeKind mode_from_string(const std::string& name) {
  if (name == "baseline") return ModeKind::Baseline;
  if (name == "remav") return ModeKind::ReMAV;
  if (name == "rt") return ModeKind::RT;
  if (name == "st") return ModeKind::ST;
  throw ValidationError("unknown test mode '" + name + "' (expected baseline, remav, rt or st)");
}

TestMode TestMode::baseline() { return {}; }

TestMode TestMode::rt() {
  TestMode m;
  m.kind = ModeKind::RT;
  return m;
}

TestMode TestMode::st() {
  TestMode m;
  m.kind = ModeKind::ST;
  return m;
}

TestMode TestMode::remav(std::shared_ptr<const airl::RewardModel> model, double beta) {
  if (!model) throw ValidationError("remav mode needs a reward model");
  TestMode m = remav([model](const sim::Observation& obs, int action) { return model->reward(obs, action); }, beta);
  m.model_scenario = model->scenario;
  return m;
}

TestMode TestMode::remav(Scorer scorer, double beta) {
  TestMode m;
  m.kind = ModeKind::ReMAV;
  m.scorer = std::move(scorer);
  m.beta = beta;
  return m;
}

void EpisodeRecord::finalize() {
  first_collision.reset();
  first_offroad.reset();
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!first_collision && steps[t].collision()) first_collision = static_cast<int>(t);
    if (!first_offroad && steps[t].os) first_offroad = static_cast<int>(t);
  }
}

namespace {

RateStat rate_stat(std::span<const EpisodeRecord> episodes, bool StepRecord::*flag) {
  std::vector<double> rates;
  for (const auto& e : episodes) {
    double hits = 0.0;
    for (const auto& s : e.steps) hits += (s.*flag) ? 1.0 : 0.0;
    rates.push_back(e.steps.empty() ? 0.0 : hits / static_cast<double>(e.steps.size()));
  }
  RateStat r;
  for (double x : rates) r.mean += x;
  r.mean /= static_cast<double>(rates.size());
  double ss = 0.0;
  for (double x : rates) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(rates.size()));
  return r;
}

}  // namespace

Aggregates compute_metrics(std::span<const EpisodeRecord> episodes, double dt,
                           const sim::MetricApplicability& applicable) {
  if (episodes.empty()) throw ValidationError("compute_metrics needs at least one episode");
  Aggregates a;
  if (applicable.cv) a.cv = rate_stat(episodes, &StepRecord::cv);
  if (applicable.co) a.co = rate_stat(episodes, &StepRecord::co);
  if (applicable.cp) a.cp = rate_stat(episodes, &StepRecord::cp);
  if (applicable.os) a.os = rate_stat(episodes, &StepRecord::os);

  double ttfc = 0.0;
  double ttfo = 0.0;
  int with_collision = 0;
  int with_offroad = 0;
  for (const auto& e : episodes) {
    // First events come from the flags, not from the stored fields.
    EpisodeRecord rec;
    rec.steps = e.steps;
    rec.finalize();
    if (rec.first_collision) {
      ttfc += *rec.first_collision * dt;
      ++with_collision;
    }
    if (rec.first_offroad) {
      ttfo += *rec.first_offroad * dt;
      ++with_offroad;
    }
  }
  const int n = static_cast<int>(episodes.size());
  if (with_collision > 0) a.ttfc = ttfc / with_collision;
  if (with_offroad > 0) a.ttfo = ttfo / with_offroad;
  a.ttfc_never = n - with_collision;
  a.ttfo_never = n - with_offroad;
  return a;
}

Coverage coverage_stats(std::span<const EpisodeRecord> episodes) {
  double steps = 0.0;
  double perturbed = 0.0;
  double failures = 0.0;
  for (const auto& e : episodes) {
    for (const auto& s : e.steps) {
      steps += 1.0;
      perturbed += s.perturbed ? 1.0 : 0.0;
      failures += s.failure() ? 1.0 : 0.0;
    }
  }
  Coverage c;
  if (steps == 0.0) return c;
  c.perturbed_fraction = perturbed / steps;
  c.failure_fraction = failures / steps;
  if (c.perturbed_fraction > 0.0) c.failures_per_perturbation = c.failure_fraction / c.perturbed_fraction;
  return c;
}

RunOutput run_test(const TestMode& mode, const policy::Policy& policy, const sim::ScenarioConfig& scenario,
                   const DisturbanceConfig& disturbance, int n_episodes, int steps, std::uint64_t seed,
                   const RunOptions& options) {
  scenario.validate();
  disturbance.validate();
  if (n_episodes < 1 || steps < 1) throw ValidationError("run_test needs episodes and steps >= 1");
  if (disturbance.kind == NoiseKind::NpcAction && (scenario.kind == sim::ScenarioKind::Straight || scenario.npcs.empty())) {
    throw ValidationError(std::string("npc action noise needs NPCs; scenario ") + sim::to_string(scenario.kind) +
                          " has none");
  }
  if (mode.kind == ModeKind::ReMAV) {
    if (!mode.scorer) throw ValidationError("remav mode needs a reward model");
    if (!std::isfinite(mode.beta)) throw ValidationError("remav threshold must be finite");
    if (mode.model_scenario && *mode.model_scenario != scenario.kind) {
      throw ValidationError(std::string("reward model is for ") + sim::to_string(*mode.model_scenario) +
                            ", scenario is " + sim::to_string(scenario.kind));
    }
  }

  policy::Policy sampler = policy;
  sampler.mode = policy::ActionMode::Sample;

  RunOutput out;
  TestReport& report = out.report;
  report.scenario = scenario.kind;
  report.mode = mode.kind;
  report.noise = disturbance.kind;
  report.dt = scenario.dt;
  if (mode.kind == ModeKind::ReMAV) report.beta = mode.beta;

  for (int e = 0; e < n_episodes; ++e) {
    const auto idx = static_cast<std::uint64_t>(e);
    auto world = sim::reset(scenario, derive_seed(seed, Stream::World, idx));
    Rng action_rng(derive_seed(seed, Stream::Action, idx));
    Rng coin_rng(derive_seed(seed, Stream::Coin, idx));
    Rng noise_rng(derive_seed(disturbance.seed ^ seed, Stream::Noise, idx));
    const bool tracing = e < options.trace_episodes;
    sim::TraceRecorder trace;

    EpisodeRecord rec;
    rec.episode = e;
    auto obs = sim::observe(world);
    // Step 0 has no predecessor gate: ST perturbs it, RT flips for it, ReMAV does not.
    bool perturb = mode.kind == ModeKind::ST || (mode.kind == ModeKind::RT && coin_rng.coin());
    for (int t = 0; t < steps && !world.terminal; ++t) {
      StepRecord step_rec;
      step_rec.perturbed = perturb;
      sim::Observation input = obs;
      if (perturb && disturbance.kind == NoiseKind::Observation) {
        input = perturb_observation(obs, gaussian_noise(noise_rng, sim::kObservationSize, disturbance.sigma));
      }
      const int action = policy::act(sampler, input, action_rng).action;

      bool next = false;
      switch (mode.kind) {
        case ModeKind::Baseline: break;
        case ModeKind::ST: next = true; break;
        case ModeKind::RT: next = coin_rng.coin(); break;
        case ModeKind::ReMAV: {
          const double r = mode.scorer(input, action);
          step_rec.r_psi = r;
          next = r < mode.beta;
          break;
        }
      }

      sim::NpcOverrides overrides;
      if (perturb && disturbance.kind == NoiseKind::NpcAction) {
        std::vector<sim::NpcCommand> deltas(world.npc_count());
        for (auto& d : deltas) {
          d.speed = uniform_noise(noise_rng, disturbance.a, disturbance.b);
          d.heading_rate = uniform_noise(noise_rng, disturbance.a, disturbance.b);
        }
        overrides = std::move(deltas);
      }
      const auto res = sim::step(world, sim::decode_action(action), overrides);
      step_rec.cv = res.outcome.cv;
      step_rec.co = res.outcome.co;
      step_rec.cp = res.outcome.cp;
      step_rec.os = res.outcome.os;
      rec.steps.push_back(step_rec);
      if (tracing) trace.record(world, res.outcome);
      obs = res.observation;
      perturb = next;
    }
    rec.finalize();
    report.episodes.push_back(std::move(rec));
    if (tracing) out.traces.push_back(std::move(trace));
  }
  report.aggregates = compute_metrics(report.episodes, report.dt, sim::applicable_metrics(scenario.kind));
  report.coverage = coverage_stats(report.episodes);
  return out;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json rate_json(const std::optional<RateStat>& r) {
  return r ? json{{"mean", r->mean}, {"std", r->std}} : json(nullptr);
}

std::optional<RateStat> rate_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return RateStat{j.at("mean").get<double>(), j.at("std").get<double>()};
}

std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

// Step flags pack as a bitmask: cv=1, co=2, cp=4, os=8, perturbed=16.
int pack(const StepRecord& s) {
  return (s.cv ? 1 : 0) | (s.co ? 2 : 0) | (s.cp ? 4 : 0) | (s.os ? 8 : 0) | (s.perturbed ? 16 : 0);
}

}  // namespace

json to_json(const TestReport& r) {
  json episodes = json::array();
  for (const auto& e : r.episodes) {
    json flags = json::array();
    json scores = json::array();
    bool scored = false;
    for (const auto& s : e.steps) {
      flags.push_back(pack(s));
      scores.push_back(opt(s.r_psi));
      scored = scored || s.r_psi.has_value();
    }
    json ej = {{"episode", e.episode},
               {"steps", e.steps.size()},
               {"first_collision", e.first_collision ? json(*e.first_collision) : json(nullptr)},
               {"first_offroad", e.first_offroad ? json(*e.first_offroad) : json(nullptr)},
               {"flags", std::move(flags)}};
    if (scored) ej["r_psi"] = std::move(scores);
    episodes.push_back(std::move(ej));
  }
  const auto& a = r.aggregates;
  return {{"format", "remav-test-report"},
          {"version", 1},
          {"scenario", sim::to_string(r.scenario)},
          {"mode", to_string(r.mode)},
          {"noise", to_string(r.noise)},
          {"beta", opt(r.beta)},
          {"dt", r.dt},
          {"aggregates",
           {{"cv", rate_json(a.cv)},
            {"co", rate_json(a.co)},
            {"cp", rate_json(a.cp)},
            {"os", rate_json(a.os)},
            {"ttfc", opt(a.ttfc)},
            {"ttfc_never", a.ttfc_never},
            {"ttfo", opt(a.ttfo)},
            {"ttfo_never", a.ttfo_never}}},
          {"coverage",
           {{"perturbed_fraction", r.coverage.perturbed_fraction},
            {"failure_fraction", r.coverage.failure_fraction},
            {"failures_per_perturbation", opt(r.coverage.failures_per_perturbation)}}},
          {"episodes", std::move(episodes)}};
}

TestReport report_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "remav-test-report") throw FormatError("not a test report");
    if (j.at("version").get<int>() != 1) throw VersionError("unsupported test report version");
    TestReport r;
    r.scenario = sim::scenario_from_string(j.at("scenario").get<std::string>());
    r.mode = mode_from_string(j.at("mode").get<std::string>());
    r.noise = noise_from_string(j.at("noise").get<std::string>());
    r.beta = opt_from_json(j.at("beta"));
    r.dt = j.at("dt").get<double>();
    const auto& a = j.at("aggregates");
    r.aggregates.cv = rate_from_json(a.at("cv"));
    r.aggregates.co = rate_from_json(a.at("co"));
    r.aggregates.cp = rate_from_json(a.at("cp"));
    r.aggregates.os = rate_from_json(a.at("os"));
    r.aggregates.ttfc = opt_from_json(a.at("ttfc"));
    r.aggregates.ttfc_never = a.at("ttfc_never").get<int>();
    r.aggregates.ttfo = opt_from_json(a.at("ttfo"));
    r.aggregates.ttfo_never = a.at("ttfo_never").get<int>();
    const auto& c = j.at("coverage");
    r.coverage.perturbed_fraction = c.at("perturbed_fraction").get<double>();
    r.coverage.failure_fraction = c.at("failure_fraction").get<double>();
    r.coverage.failures_per_perturbation = opt_from_json(c.at("failures_per_perturbation"));
    for (const auto& ej : j.at("episodes")) {
      EpisodeRecord e;
      e.episode = ej.at("episode").get<int>();
      const auto& flags = ej.at("flags");
      for (std::size_t t = 0; t < flags.size(); ++t) {
        const int f = flags[t].get<int>();
        StepRecord s{(f & 1) != 0, (f & 2) != 0, (f & 4) != 0, (f & 8) != 0, (f & 16) != 0, std::nullopt};
        if (ej.contains("r_psi")) s.r_psi = opt_from_json(ej["r_psi"].at(t));
        e.steps.push_back(s);
      }
      e.finalize();
      r.episodes.push_back(std::move(e));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed test report: ") + e.what());
  }
}

const char* table_header() {
  return "scenario,mode,noise,CV,CO,CP,OS,TTFC,TTFO,perturbed_fraction,"
         "CV_std,CO_std,CP_std,OS_std,TTFC_never,TTFO_never,failure_fraction,failures_per_perturbation";
}

std::string table_row(const TestReport& r) {
  // Numbers print exactly as in the report JSON.
  auto num = [](const std::optional<double>& v) { return v ? json(*v).dump() : std::string(); };
  auto mean = [&](const std::optional<RateStat>& s) { return s ? json(s->mean).dump() : std::string(); };
  auto sd = [&](const std::optional<RateStat>& s) { return s ? json(s->std).dump() : std::string(); };
  const auto& a = r.aggregates;
  std::string row = std::string(sim::to_string(r.scenario)) + ',' + to_string(r.mode) + ',' + to_string(r.noise);
  for (const auto& part : {mean(a.cv), mean(a.co), mean(a.cp), mean(a.os), num(a.ttfc), num(a.ttfo),
                           json(r.coverage.perturbed_fraction).dump(), sd(a.cv), sd(a.co), sd(a.cp), sd(a.os),
                           std::to_string(a.ttfc_never), std::to_string(a.ttfo_never),
                           json(r.coverage.failure_fraction).dump(), num(r.coverage.failures_per_perturbation)}) {
    row += ',';
    row += part;
  }
  return row;
}

}  // namespace remav::testing
