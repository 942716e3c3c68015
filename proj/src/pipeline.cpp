#include "remav/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "remav/analysis.hpp"
#include "remav/error.hpp"
#include "remav/hash.hpp"
#include "remav/trajectory.hpp"

namespace remav::pipeline {

using nlohmann::json;

namespace {

constexpr sim::ScenarioKind kAllScenarios[] = {sim::ScenarioKind::Straight, sim::ScenarioKind::Pedestrian,
                                               sim::ScenarioKind::ThreeWay};

const json& section(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw ValidationError(std::string("config is missing the '") + name + "' section");
  const json& s = j.at(name);
  if (!s.is_object()) throw ValidationError(std::string("config section '") + name + "' must be an object");
  return s;
}

template <typename T>
T get_or(const json& s, const char* section_name, const char* key, T fallback) {
  if (!s.contains(key)) return fallback;
  try {
    return s.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config field ") + section_name + "." + key + " has the wrong type");
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

std::string short_hash(const std::string& content) { return sha256_hex(content).substr(0, 12); }

// Writes `content` to dir/<stem>-<hash><ext> and returns the path.
fs::path write_artifact(const fs::path& dir, const std::string& stem, const std::string& ext, const std::string& content) {
  const fs::path path = dir / (stem + "-" + short_hash(content) + ext);
  write_file(path, content);
  return path;
}

struct Workspace {
  fs::path root;
  fs::path policies() const { return root / "policies"; }
  fs::path trajectories() const { return root / "trajectories"; }
  fs::path models() const { return root / "models"; }
  fs::path profiles() const { return root / "profiles"; }
  fs::path reports() const { return root / "reports"; }

  void create() const {
    for (const auto& d : {policies(), trajectories(), models(), profiles(), reports()}) fs::create_directories(d);
  }
  std::string relative(const fs::path& p) const { return fs::relative(p, root).generic_string(); }
};

struct Manifest {
  json record;
  fs::path path;

  // Absolute path of the output with the given role.
  fs::path output(const Workspace& ws, const std::string& role) const {
    for (const auto& o : record.at("outputs")) {
      if (o.at("role").get<std::string>() == role) return ws.root / o.at("path").get<std::string>();
    }
    throw ArtifactError("manifest " + path.string() + " lists no '" + role + "' output");
  }
  std::string output_hash(const std::string& role) const {
    for (const auto& o : record.at("outputs")) {
      if (o.at("role").get<std::string>() == role) return o.at("sha256").get<std::string>();
    }
    throw ArtifactError("manifest " + path.string() + " lists no '" + role + "' output");
  }
};

struct Output {
  std::string role;
  fs::path path;
};

Manifest write_manifest(const Workspace& ws, const fs::path& path, const std::string& stage, sim::ScenarioKind scenario,
                        std::uint64_t seed, const json& inputs, const std::vector<Output>& outputs, json extra = json::object()) {
  json outs = json::array();
  for (const auto& o : outputs) {
    outs.push_back({{"role", o.role}, {"path", ws.relative(o.path)}, {"sha256", sha256_hex(read_file(o.path))}});
  }
  json record = {{"stage", stage},   {"version", 1},       {"scenario", sim::to_string(scenario)},
                 {"seed", seed},     {"inputs", inputs},   {"outputs", std::move(outs)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) record[it.key()] = it.value();
  write_file(path, record.dump(2) + "\n");
  return {record, path};
}

// Loads an upstream manifest and checks that every output it lists is still
// present and unchanged.
Manifest read_manifest(const Workspace& ws, const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw ArtifactError("missing upstream artifact " + path.string() + " (produced by `remav " + producer + "`)");
  }
  Manifest m;
  m.path = path;
  try {
    m.record = json::parse(read_file(path));
    for (const auto& o : m.record.at("outputs")) {
      const fs::path file = ws.root / o.at("path").get<std::string>();
      if (!fs::exists(file)) {
        throw ArtifactError("missing upstream artifact " + file.string() + " (produced by `remav " + producer + "`)");
      }
      if (sha256_hex(read_file(file)) != o.at("sha256").get<std::string>()) {
        throw ArtifactError("stale upstream artifact " + file.string() + " does not match its manifest; rerun `remav " +
                            producer + "`");
      }
    }
  } catch (const json::exception& e) {
    throw ArtifactError("unreadable manifest " + path.string() + ": " + e.what());
  }
  return m;
}

fs::path policy_manifest_path(const Workspace& ws, sim::ScenarioKind k) {
  return ws.policies() / (std::string("train-av-") + sim::to_string(k) + ".manifest.json");
}
fs::path trajectory_manifest_path(const Workspace& ws, sim::ScenarioKind k) {
  return ws.trajectories() / (std::string("collect-") + sim::to_string(k) + ".manifest.json");
}
fs::path model_manifest_path(const Workspace& ws, sim::ScenarioKind k) {
  return ws.models() / (std::string("train-reward-") + sim::to_string(k) + ".manifest.json");
}
fs::path profile_manifest_path(const Workspace& ws, sim::ScenarioKind k) {
  return ws.profiles() / (std::string("analyze-") + sim::to_string(k) + ".manifest.json");
}

json policy_record(const policy::Policy& p, const std::string& scenario, std::uint64_t seed,
                   const policy::PpoHyper& hyper, long steps) {
  return {{"format", "remav-policy"}, {"version", 1},     {"scenario", scenario},
          {"seed", seed},             {"hyper", to_json(hyper)}, {"trained_steps", steps},
          {"policy", policy::to_json(p)}};
}

policy::Policy load_policy(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    if (j.at("format").get<std::string>() != "remav-policy") throw FormatError("not a policy snapshot: " + path.string());
    return policy::policy_from_json(j.at("policy"));
  } catch (const json::exception& e) {
    throw FormatError("malformed policy snapshot " + path.string() + ": " + e.what());
  }
}

std::string curve_csv(const std::vector<policy::IterationLog>& log) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,steps,episodes_completed,mean_episode_reward,policy_loss,value_loss,entropy,approx_kl,clip_fraction\n";
  for (const auto& e : log) {
    out << e.iteration << ',' << e.steps << ',' << e.episodes_completed << ',' << e.mean_episode_reward << ','
        << e.stats.policy_loss << ',' << e.stats.value_loss << ',' << e.stats.entropy << ',' << e.stats.approx_kl << ','
        << e.stats.clip_fraction << '\n';
  }
  return out.str();
}

sim::ScenarioKind target_scenario(const RunConfig& config, const Overrides& o) {
  return o.scenario ? sim::scenario_from_string(*o.scenario) : config.scenario;
}

Workspace workspace_of(const RunConfig& config, const Overrides& o) {
  Workspace ws{o.workspace ? *o.workspace : config.workspace};
  ws.create();
  return ws;
}

}  // namespace

const policy::PpoHyper& AvSection::hyper_for(sim::ScenarioKind kind) const {
  const auto it = per_scenario.find(kind);
  return it == per_scenario.end() ? ppo : it->second;
}

sim::ScenarioConfig RunConfig::scenario_config(sim::ScenarioKind kind) const {
  json s = scenario_section;
  const bool own_kind = sim::scenario_from_string(s.at("kind").get<std::string>()) == kind;
  if (!own_kind) {
    json shared = {{"kind", sim::to_string(kind)}};
    for (const char* key : {"dt", "episode_steps", "lane_width", "goal_margin"}) {
      if (s.contains(key)) shared[key] = s[key];
    }
    s = shared;
  }
  return sim::scenario_from_json(s);
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  const json& scenario = section(j, "scenario");
  const json& av = section(j, "av");
  const json& collect = section(j, "collect");
  const json& airl_s = section(j, "airl");
  const json& analyze = section(j, "analyze");
  const json& test = section(j, "test");
  const json& paths = section(j, "paths");

  if (!scenario.contains("kind")) throw ValidationError("config field scenario.kind is required");
  c.scenario_section = scenario;
  c.scenario = sim::scenario_from_string(get_or<std::string>(scenario, "scenario", "kind", ""));
  c.scenario_config(c.scenario);  // validates geometry overrides early

  c.av.seed = get_or<std::uint64_t>(av, "av", "seed", c.av.seed);
  c.av.shared_policy = get_or<bool>(av, "av", "shared_policy", c.av.shared_policy);
  if (av.contains("ppo")) c.av.ppo = policy::ppo_hyper_from_json(av.at("ppo"));
  if (av.contains("per_scenario")) {
    for (auto it = av.at("per_scenario").begin(); it != av.at("per_scenario").end(); ++it) {
      c.av.per_scenario[sim::scenario_from_string(it.key())] = policy::ppo_hyper_from_json(it.value(), c.av.ppo);
    }
  }

  c.collect.episodes = get_or<int>(collect, "collect", "episodes", c.collect.episodes);
  c.collect.steps = get_or<int>(collect, "collect", "steps", c.collect.steps);
  c.collect.seed = get_or<std::uint64_t>(collect, "collect", "seed", c.collect.seed);
  c.collect.timestamp = get_or<std::int64_t>(collect, "collect", "timestamp", c.collect.timestamp);

  if (airl_s.contains("hyper")) c.airl.hyper = airl::airl_hyper_from_json(airl_s.at("hyper"));
  c.airl.seed = get_or<std::uint64_t>(airl_s, "airl", "seed", c.airl.seed);

  c.analyze.episodes = get_or<int>(analyze, "analyze", "episodes", c.analyze.episodes);
  c.analyze.steps = get_or<int>(analyze, "analyze", "steps", c.analyze.steps);
  c.analyze.seed = get_or<std::uint64_t>(analyze, "analyze", "seed", c.analyze.seed);

  c.test.mode = get_or<std::string>(test, "test", "mode", c.test.mode);
  if (c.test.mode != "all") testing::mode_from_string(c.test.mode);
  auto& d = c.test.disturbance;
  d.kind = testing::noise_from_string(get_or<std::string>(test, "test", "noise", "obs"));
  d.sigma = get_or<double>(test, "test", "sigma", d.sigma);
  d.a = get_or<double>(test, "test", "uniform_a", d.a);
  d.b = get_or<double>(test, "test", "uniform_b", d.b);
  d.seed = get_or<std::uint64_t>(test, "test", "noise_seed", d.seed);
  d.validate();
  c.test.episodes = get_or<int>(test, "test", "episodes", c.test.episodes);
  c.test.steps = get_or<int>(test, "test", "steps", c.test.steps);
  c.test.seed = get_or<std::uint64_t>(test, "test", "seed", c.test.seed);
  c.test.trace_episodes = get_or<int>(test, "test", "trace_episodes", c.test.trace_episodes);

  c.workspace = get_or<std::string>(paths, "paths", "workspace", c.workspace.string());

  for (int n : {c.collect.episodes, c.collect.steps, c.analyze.episodes, c.analyze.steps, c.test.episodes, c.test.steps}) {
    if (n < 1) throw ValidationError("episode and step counts must be >= 1");
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file " + path.string() + " does not exist");
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("config file " + path.string() + " is not valid JSON");
  RunConfig c = parse_config(j);
  // A relative workspace is resolved against the config file's directory.
  if (c.workspace.is_relative()) c.workspace = (path.parent_path() / c.workspace).lexically_normal();
  return c;
}

WorkspaceLock::WorkspaceLock(const fs::path& workspace) : path_(workspace / ".lock") {
  fs::create_directories(workspace);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) throw StateError("workspace " + workspace.string() + " is locked by another stage (" + path_.string() + ")");
    throw Error("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

WorkspaceLock::~WorkspaceLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

StageResult cmd_train_av(const RunConfig& config, const Overrides& o) {
  const Workspace ws = workspace_of(config, o);
  const std::uint64_t seed = o.seed ? *o.seed : config.av.seed;
  StageResult result;
  if (config.av.shared_policy) {
    std::vector<sim::ScenarioConfig> scenarios;
    for (auto k : kAllScenarios) scenarios.push_back(config.scenario_config(k));
    const auto& hyper = config.av.ppo;
    const auto trained = policy::ppo_train(scenarios, hyper, seed);
    const auto snapshot = write_artifact(ws.policies(), "policy-shared", ".json",
                                         policy_record(trained.policy, "shared", seed, hyper, hyper.total_steps).dump() + "\n");
    const auto curve = write_artifact(ws.policies(), "curve-shared", ".csv", curve_csv(trained.log));
    const auto hash = trajectory::policy_hash(trained.policy);
    for (auto k : kAllScenarios) {
      write_manifest(ws, policy_manifest_path(ws, k), "train-av", k, seed, {{"hyper", to_json(hyper)}},
                     {{"policy", snapshot}, {"curve", curve}}, {{"policy_hash", hash}, {"shared", true}});
    }
    result.outputs = {snapshot, curve};
    result.summary = {{"policy_hash", hash}, {"iterations", trained.log.size()}};
    return result;
  }
  const auto kind = target_scenario(config, o);
  const auto& hyper = config.av.hyper_for(kind);
  const auto trained = policy::ppo_train(config.scenario_config(kind), hyper, seed);
  const std::string stem = sim::to_string(kind);
  const auto snapshot = write_artifact(ws.policies(), "policy-" + stem, ".json",
                                       policy_record(trained.policy, stem, seed, hyper, hyper.total_steps).dump() + "\n");
  const auto curve = write_artifact(ws.policies(), "curve-" + stem, ".csv", curve_csv(trained.log));
  const auto hash = trajectory::policy_hash(trained.policy);
  write_manifest(ws, policy_manifest_path(ws, kind), "train-av", kind, seed, {{"hyper", to_json(hyper)}},
                 {{"policy", snapshot}, {"curve", curve}}, {{"policy_hash", hash}, {"shared", false}});
  result.outputs = {snapshot, curve};
  result.summary = {{"policy_hash", hash}, {"iterations", trained.log.size()},
                    {"final_mean_reward", trained.log.empty() ? 0.0 : trained.log.back().mean_episode_reward}};
  return result;
}

StageResult cmd_collect(const RunConfig& config, const Overrides& o) {
  const Workspace ws = workspace_of(config, o);
  const auto kind = target_scenario(config, o);
  const std::uint64_t seed = o.seed ? *o.seed : config.collect.seed;
  const int episodes = o.episodes ? *o.episodes : config.collect.episodes;
  const auto pm = read_manifest(ws, policy_manifest_path(ws, kind), "train-av");
  const auto policy = load_policy(pm.output(ws, "policy"));
  const auto set = trajectory::collect(policy, config.scenario_config(kind), episodes, config.collect.steps, seed,
                                       config.collect.timestamp);
  const auto file = write_artifact(ws.trajectories(), std::string("trajectories-") + sim::to_string(kind), ".jsonl",
                                   trajectory::serialize(set));
  write_manifest(ws, trajectory_manifest_path(ws, kind), "collect", kind, seed,
                 {{"policy", pm.output_hash("policy")}, {"episodes", episodes}, {"steps", config.collect.steps}},
                 {{"trajectories", file}}, {{"policy_hash", pm.record.at("policy_hash")}});
  return {{file}, {{"trajectories", set.trajectories.size()}, {"pairs", set.pair_count()}}};
}

StageResult cmd_train_reward(const RunConfig& config, const Overrides& o) {
  const Workspace ws = workspace_of(config, o);
  const auto kind = target_scenario(config, o);
  const std::uint64_t seed = o.seed ? *o.seed : config.airl.seed;
  auto hyper = config.airl.hyper;
  if (o.episodes) hyper.episodes = *o.episodes;
  const auto tm = read_manifest(ws, trajectory_manifest_path(ws, kind), "collect");
  const auto expert = trajectory::load(tm.output(ws, "trajectories"));
  const auto trained = airl::train_airl(expert, config.scenario_config(kind), hyper, seed);
  const std::string stem = sim::to_string(kind);
  const auto model = write_artifact(ws.models(), "reward-" + stem, ".json", airl::to_json(trained.model).dump() + "\n");
  std::ostringstream curves;
  airl::write_curves_csv(curves, trained.curves);
  const auto curve = write_artifact(ws.models(), "airl-curve-" + stem, ".csv", curves.str());
  write_manifest(ws, model_manifest_path(ws, kind), "train-reward", kind, seed,
                 {{"trajectories", tm.output_hash("trajectories")}, {"hyper", to_json(hyper)}},
                 {{"model", model}, {"curve", curve}}, {{"policy_hash", tm.record.at("policy_hash")}});
  json summary = {{"rounds", trained.model.rounds}, {"generator_episodes", trained.generator_episodes}};
  if (!trained.curves.empty()) {
    summary["disc_accuracy"] = trained.curves.back().disc_accuracy;
    summary["mean_r_expert"] = trained.curves.back().mean_r_expert;
    summary["mean_r_generator"] = trained.curves.back().mean_r_generator;
  }
  return {{model, curve}, summary};
}

StageResult cmd_analyze(const RunConfig& config, const Overrides& o) {
  const Workspace ws = workspace_of(config, o);
  const auto kind = target_scenario(config, o);
  const std::uint64_t seed = o.seed ? *o.seed : config.analyze.seed;
  const int episodes = o.episodes ? *o.episodes : config.analyze.episodes;
  const auto pm = read_manifest(ws, policy_manifest_path(ws, kind), "train-av");
  const auto mm = read_manifest(ws, model_manifest_path(ws, kind), "train-reward");
  const auto policy = load_policy(pm.output(ws, "policy"));
  json mj;
  try {
    mj = json::parse(read_file(mm.output(ws, "model")));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed reward model: ") + e.what());
  }
  const auto model = airl::reward_model_from_json(mj);
  const auto profile =
      analysis::score_behavior(policy, model, config.scenario_config(kind), episodes, config.analyze.steps, seed);
  const std::string stem = sim::to_string(kind);
  const auto pfile = write_artifact(ws.profiles(), "profile-" + stem, ".json", analysis::to_json(profile).dump() + "\n");
  std::ostringstream hist;
  analysis::write_histogram_csv(hist, profile.histogram);
  const auto hfile = write_artifact(ws.profiles(), "histogram-" + stem, ".csv", hist.str());
  const auto summary = analysis::summarize(profile);
  std::ostringstream sum;
  analysis::write_summary_csv(sum, summary);
  const auto sfile = write_artifact(ws.profiles(), "summary-" + stem, ".csv", sum.str());
  write_manifest(ws, profile_manifest_path(ws, kind), "analyze", kind, seed,
                 {{"policy", pm.output_hash("policy")}, {"model", mm.output_hash("model")}, {"episodes", episodes}},
                 {{"profile", pfile}, {"histogram", hfile}, {"summary", sfile}},
                 {{"policy_hash", pm.record.at("policy_hash")}, {"beta", profile.stats.beta}});
  return {{pfile, hfile, sfile},
          {{"mu", summary.mu}, {"sigma", summary.sigma}, {"beta", summary.beta}, {"samples", summary.count}}};
}

StageResult cmd_test(const RunConfig& config, const Overrides& o) {
  const Workspace ws = workspace_of(config, o);
  const auto kind = target_scenario(config, o);
  const std::uint64_t seed = o.seed ? *o.seed : config.test.seed;
  const int episodes = o.episodes ? *o.episodes : config.test.episodes;
  const std::string mode_name = o.mode ? *o.mode : config.test.mode;
  auto disturbance = config.test.disturbance;
  if (o.noise) disturbance.kind = testing::noise_from_string(*o.noise);

  std::vector<testing::ModeKind> modes;
  if (mode_name == "all") {
    modes = {testing::ModeKind::Baseline, testing::ModeKind::ReMAV, testing::ModeKind::RT, testing::ModeKind::ST};
  } else {
    modes = {testing::mode_from_string(mode_name)};
  }
  const auto scenario = config.scenario_config(kind);

  const auto pm = read_manifest(ws, policy_manifest_path(ws, kind), "train-av");
  const auto policy = load_policy(pm.output(ws, "policy"));
  std::optional<Manifest> mm;
  std::optional<Manifest> am;
  std::shared_ptr<const airl::RewardModel> model;
  double beta = 0.0;
  if (std::find(modes.begin(), modes.end(), testing::ModeKind::ReMAV) != modes.end()) {
    mm = read_manifest(ws, model_manifest_path(ws, kind), "train-reward");
    am = read_manifest(ws, profile_manifest_path(ws, kind), "analyze");
    try {
      model = std::make_shared<const airl::RewardModel>(
          airl::reward_model_from_json(json::parse(read_file(mm->output(ws, "model")))));
      beta = analysis::profile_from_json(json::parse(read_file(am->output(ws, "profile")))).stats.beta;
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed upstream artifact: ") + e.what());
    }
  }
  // Reject an inconsistent configuration before any episode runs.
  for (auto m : modes) {
    testing::TestMode mode = m == testing::ModeKind::ReMAV ? testing::TestMode::remav(model, beta) : testing::TestMode{};
    mode.kind = m;
    testing::run_test(mode, policy, scenario, disturbance, 1, 1, seed);
  }

  StageResult result;
  result.summary = json::array();
  for (auto m : modes) {
    testing::TestMode mode;
    switch (m) {
      case testing::ModeKind::Baseline: mode = testing::TestMode::baseline(); break;
      case testing::ModeKind::RT: mode = testing::TestMode::rt(); break;
      case testing::ModeKind::ST: mode = testing::TestMode::st(); break;
      case testing::ModeKind::ReMAV: mode = testing::TestMode::remav(model, beta); break;
    }
    testing::RunOptions options;
    options.trace_episodes = config.test.trace_episodes;
    const auto run = testing::run_test(mode, policy, scenario, disturbance, episodes, config.test.steps, seed, options);
    const std::string stem = std::string(sim::to_string(kind)) + "-" + testing::to_string(m) + "-" +
                             testing::to_string(disturbance.kind);
    const auto rfile = write_artifact(ws.reports(), "report-" + stem, ".json", testing::to_json(run.report).dump() + "\n");
    std::vector<Output> outputs = {{"report", rfile}};
    for (std::size_t i = 0; i < run.traces.size(); ++i) {
      std::ostringstream csv;
      run.traces[i].write_csv(csv);
      outputs.push_back({"trace", write_artifact(ws.reports(), "trace-" + stem + "-ep" + std::to_string(i), ".csv", csv.str())});
    }
    json inputs = {{"policy", pm.output_hash("policy")}, {"episodes", episodes}, {"steps", config.test.steps},
                   {"noise", testing::to_string(disturbance.kind)}, {"sigma", disturbance.sigma},
                   {"uniform_a", disturbance.a}, {"uniform_b", disturbance.b}};
    if (m == testing::ModeKind::ReMAV) {
      inputs["model"] = mm->output_hash("model");
      inputs["profile"] = am->output_hash("profile");
    }
    write_manifest(ws, ws.reports() / ("test-" + stem + ".manifest.json"), "test", kind, seed, inputs, outputs,
                   {{"policy_hash", pm.record.at("policy_hash")}, {"mode", testing::to_string(m)}});
    for (const auto& out : outputs) result.outputs.push_back(out.path);
    result.summary.push_back({{"mode", testing::to_string(m)},
                              {"row", testing::table_row(run.report)}});
  }
  return result;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 1;
  if (dynamic_cast<const ArtifactError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 2;
  return 3;
}

json error_record(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  return {{"error", err ? err->kind() : "runtime"}, {"message", e.what()}, {"exit_code", exit_code_for(e)}};
}

namespace {

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(6);
  s << x;
  return s.str();
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string histogram_svg(const std::vector<long>& counts, double lo, double hi, const std::string& title) {
  const double width = 640.0;
  const double height = 320.0;
  const double margin = 30.0;
  const long peak = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  const double bar = (width - 2 * margin) / std::max<std::size_t>(counts.size(), 1);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double h = peak > 0 ? (height - 2 * margin) * static_cast<double>(counts[i]) / static_cast<double>(peak) : 0.0;
    svg << "<rect x=\"" << fmt(margin + bar * static_cast<double>(i)) << "\" y=\"" << fmt(height - margin - h)
        << "\" width=\"" << fmt(bar * 0.9) << "\" height=\"" << fmt(h) << "\" fill=\"#4477aa\"/>\n";
  }
  svg << "<text x=\"" << margin << "\" y=\"" << height - 8 << "\" font-size=\"11\">" << fmt(lo) << "</text>\n";
  svg << "<text x=\"" << width - margin - 20 << "\" y=\"" << height - 8 << "\" font-size=\"11\">" << fmt(hi) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::string trace_svg(const std::vector<std::vector<sim::Vec2>>& paths, const std::string& title) {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& path : paths) {
    for (const auto& p : path) {
      if (first) {
        x0 = x1 = p.x;
        y0 = y1 = p.y;
        first = false;
      }
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  const double size = 480.0;
  const double margin = 20.0;
  const double span = std::max({x1 - x0, y1 - y0, 1.0});
  auto sx = [&](double x) { return margin + (x - x0) / span * (size - 2 * margin); };
  auto sy = [&](double y) { return size - margin - (y - y0) / span * (size - 2 * margin); };
  static const char* colors[] = {"#cc3311", "#0077bb", "#009988", "#ee7733", "#33bbee"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  svg << "<text x=\"" << margin << "\" y=\"16\" font-size=\"13\">" << escape(title) << "</text>\n";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    svg << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colors[i % 5] << "\" points=\"";
    for (const auto& p : paths[i]) svg << fmt(sx(p.x)) << ',' << fmt(sy(p.y)) << ' ';
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

namespace {

// Body paths from a trace CSV, in body_id order.
std::vector<std::vector<sim::Vec2>> trace_paths(const std::string& csv) {
  std::map<int, std::vector<sim::Vec2>> bodies;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) continue;
    bodies[std::stoi(cells[1])].push_back({std::stod(cells[3]), std::stod(cells[4])});
  }
  std::vector<std::vector<sim::Vec2>> out;
  for (auto& [id, path] : bodies) out.push_back(std::move(path));
  return out;
}

int mode_rank(const std::string& mode) {
  static const char* order[] = {"baseline", "remav", "rt", "st"};
  for (int i = 0; i < 4; ++i) {
    if (mode == order[i]) return i;
  }
  return 4;
}

}  // namespace

StageResult cmd_report(const fs::path& root, bool force) {
  const Workspace ws{root};
  if (!fs::exists(ws.reports())) throw ArtifactError("workspace " + root.string() + " has no reports directory");
  std::vector<fs::path> manifest_paths;
  for (const auto& entry : fs::directory_iterator(ws.reports())) {
    const auto name = entry.path().filename().string();
    if (name.rfind("test-", 0) == 0 && name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json") {
      manifest_paths.push_back(entry.path());
    }
  }
  if (manifest_paths.empty()) throw ArtifactError("no test reports in " + ws.reports().string() + " (produced by `remav test`)");

  struct Entry {
    Manifest manifest;
    testing::TestReport report;
  };
  std::vector<Entry> entries;
  for (const auto& p : manifest_paths) {
    auto m = read_manifest(ws, p, "test");
    auto report = testing::report_from_json(json::parse(read_file(m.output(ws, "report"))));
    entries.push_back({std::move(m), std::move(report)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    const auto ka = std::make_tuple(static_cast<int>(a.report.scenario), mode_rank(testing::to_string(a.report.mode)),
                                    static_cast<int>(a.report.noise));
    const auto kb = std::make_tuple(static_cast<int>(b.report.scenario), mode_rank(testing::to_string(b.report.mode)),
                                    static_cast<int>(b.report.noise));
    return ka < kb;
  });

  std::map<sim::ScenarioKind, std::string> hashes;
  for (const auto& e : entries) {
    const auto hash = e.manifest.record.at("policy_hash").get<std::string>();
    auto [it, inserted] = hashes.emplace(e.report.scenario, hash);
    if (!inserted && it->second != hash && !force) {
      throw ValidationError(std::string("reports for ") + sim::to_string(e.report.scenario) +
                            " come from different policies (" + it->second.substr(0, 12) + " vs " + hash.substr(0, 12) +
                            "); rerun the tests or pass --force");
    }
  }

  StageResult result;
  std::string table = std::string(testing::table_header()) + "\n";
  for (const auto& e : entries) table += testing::table_row(e.report) + "\n";
  const fs::path table_path = ws.reports() / "summary.csv";
  write_file(table_path, table);
  result.outputs.push_back(table_path);

  for (auto k : kAllScenarios) {
    const auto mpath = profile_manifest_path(ws, k);
    if (!fs::exists(mpath)) continue;
    const auto m = read_manifest(ws, mpath, "analyze");
    const std::string csv = read_file(m.output(ws, "histogram"));
    const std::string stem = std::string("histogram-") + sim::to_string(k);
    write_file(ws.reports() / (stem + ".csv"), csv);
    const auto profile = analysis::profile_from_json(json::parse(read_file(m.output(ws, "profile"))));
    const std::vector<long> counts(profile.histogram.counts.begin(), profile.histogram.counts.end());
    write_file(ws.reports() / (stem + ".svg"),
               histogram_svg(counts, analysis::kHistogramLo, analysis::kHistogramHi,
                             std::string("r_psi ") + sim::to_string(k) + " beta=" + fmt(profile.stats.beta)));
    result.outputs.push_back(ws.reports() / (stem + ".csv"));
    result.outputs.push_back(ws.reports() / (stem + ".svg"));
  }

  for (const auto& e : entries) {
    for (const auto& o : e.manifest.record.at("outputs")) {
      if (o.at("role").get<std::string>() != "trace") continue;
      const fs::path csv = ws.root / o.at("path").get<std::string>();
      fs::path svg = csv;
      svg.replace_extension(".svg");
      write_file(svg, trace_svg(trace_paths(read_file(csv)), csv.stem().string()));
      result.outputs.push_back(svg);
    }
  }
  result.summary = {{"rows", entries.size()}, {"table", ws.relative(table_path)}};
  return result;
}

}  // namespace remav::pipeline
