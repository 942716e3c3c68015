// Command-line driver for the pipeline stages.
#include <CLI11.hpp>

#include <iostream>

#include "remav/error.hpp"
#include "remav/pipeline.hpp"

namespace pl = remav::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"ReMAV test bench: train, collect, model, analyze, test, report"};
  app.require_subcommand(1);

  std::string config_path;
  pl::Overrides o;
  std::string workspace;
  std::uint64_t seed = 0;
  std::string scenario;
  std::string mode;
  std::string noise;
  int episodes = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config_path, "run configuration (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--workspace", workspace, "workspace directory (overrides paths.workspace)");
    cmd->add_flag("--force", o.force, "accept mixed-provenance inputs");
  };
  auto add_stage = [&](const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, true);
    cmd->add_option("--seed", seed, "override the stage seed");
    cmd->add_option("--scenario", scenario, "straight, pedestrian or threeway");
    cmd->add_option("--episodes", episodes, "override the stage episode count")->check(CLI::PositiveNumber);
    return cmd;
  };

  auto* train = add_stage("train-av", "train the AV policy with PPO");
  auto* collect = add_stage("collect", "collect expert trajectories");
  auto* reward = add_stage("train-reward", "learn the reward model with AIRL");
  auto* analyze = add_stage("analyze", "score normal driving and extract beta");
  auto* test = add_stage("test", "run ReMAV, RT, ST or baseline tests");
  test->add_option("--mode", mode, "remav, rt, st, baseline or all");
  test->add_option("--noise", noise, "obs or npc");
  auto* report = app.add_subcommand("report", "merge test reports into tables and plots");
  add_common(report, false);

  CLI11_PARSE(app, argc, argv);

  try {
    auto* cmd = app.get_subcommands().front();
    if (!workspace.empty()) o.workspace = workspace;
    if (cmd != report) {
      if (cmd->count("--seed")) o.seed = seed;
      if (cmd->count("--scenario")) o.scenario = scenario;
      if (cmd->count("--episodes")) o.episodes = episodes;
    }
    if (cmd == test && test->count("--mode")) o.mode = mode;
    if (cmd == test && test->count("--noise")) o.noise = noise;

    pl::StageResult result;
    if (cmd == report) {
      std::filesystem::path root;
      if (o.workspace) {
        root = *o.workspace;
      } else if (!config_path.empty()) {
        root = pl::load_config(config_path).workspace;
      } else {
        throw remav::ValidationError("report needs --workspace or --config");
      }
      pl::WorkspaceLock lock(root);
      result = pl::cmd_report(root, o.force);
    } else {
      const auto config = pl::load_config(config_path);
      pl::WorkspaceLock lock(o.workspace ? *o.workspace : config.workspace);
      if (cmd == train) result = pl::cmd_train_av(config, o);
      else if (cmd == collect) result = pl::cmd_collect(config, o);
      else if (cmd == reward) result = pl::cmd_train_reward(config, o);
      else if (cmd == analyze) result = pl::cmd_analyze(config, o);
      else result = pl::cmd_test(config, o);
    }
    nlohmann::json out = {{"stage", cmd->get_name()}, {"summary", result.summary}, {"outputs", nlohmann::json::array()}};
    for (const auto& p : result.outputs) out["outputs"].push_back(p.string());
    std::cout << out.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << pl::error_record(e).dump() << "\n";
    return pl::exit_code_for(e);
  }
}
