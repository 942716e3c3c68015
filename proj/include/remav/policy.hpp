#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "remav/nn.hpp"
#include "remav/rng.hpp"
#include "remav/sim.hpp"

namespace remav::policy {

enum class ActionMode { Sample, Greedy };

// Actor-critic pair over the 12-feature observation and 9 discrete actions.
struct Policy {
  nn::DenseNet actor;   // softmax over actions
  nn::DenseNet critic;  // scalar value
  ActionMode mode = ActionMode::Sample;

  // AV policy: actor 12-64-64-9, critic 12-64-64-1.
  static Policy av(std::uint64_t seed);
  // Generator policy: actor 12-20-20-9, critic 12-64-64-1.
  static Policy generator(std::uint64_t seed);
  // Zero-weight actor (uniform distribution), used as the random baseline.
  static Policy uniform();
  static Policy create(std::span<const std::size_t> actor_widths, std::span<const std::size_t> critic_widths,
                       std::uint64_t seed);

  bool operator==(const Policy&) const = default;
};

struct ActResult {
  int action = 0;
  double log_prob = 0.0;
};

// Sample mode inverts the CDF with one uniform01 draw; Greedy returns the
// argmax with the lowest index winning ties and draws nothing.
ActResult act(const Policy& policy, std::span<const double> observation, Rng& rng);
ActResult act_from_probs(std::span<const double> probs, ActionMode mode, Rng& rng);

double value(const Policy& policy, std::span<const double> observation);

struct PpoHyper {
  double gamma = 0.99;
  double clip = 0.3;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double gae_lambda = 0.95;
  double lr = 6e-4;
  int minibatch = 64;
  int epochs = 8;
  int batch_size = 128;
  long total_steps = 100000;
  // Multiplies R_AV before advantage estimation so value targets stay O(1).
  double reward_scale = 0.01;

  void validate() const;
  bool operator==(const PpoHyper&) const = default;
};

nlohmann::json to_json(const PpoHyper& h);
PpoHyper ppo_hyper_from_json(const nlohmann::json& j, PpoHyper defaults = {});

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Standard GAE recursion over one contiguous segment. `bootstrap` is V of the
// state after the last step (0 for a terminal end).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                      double gamma, double lambda);

// Mean 0, population std 1. A batch with zero spread maps to all zeros.
void normalize_advantages(std::span<double> advantages);

struct Surrogate {
  double objective = 0.0;   // min(r*A, clip(r)*A)
  double d_ratio = 0.0;     // d objective / d ratio
  bool clip_active = false; // clip(r) != r, i.e. |r - 1| > eps
};

Surrogate clipped_surrogate(double ratio, double advantage, double clip);

// One environment step as stored for an update.
struct Transition {
  sim::Observation observation{};
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool episode_end = false;  // last step of an episode segment
  bool terminal = false;     // true termination (no bootstrap)
  double bootstrap = 0.0;    // V(next state) when episode_end && !terminal
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

struct Optimizers {
  nn::AdamState actor;
  nn::AdamState critic;

  Optimizers() = default;
  Optimizers(const Policy& policy, double lr);
};

// GAE over the batch (segments split at episode_end, the final open segment
// bootstrapped with `tail_bootstrap`), advantage normalization, then
// `epochs` passes of shuffled minibatches of the clipped objective.
UpdateStats ppo_update(Policy& policy, Optimizers& optimizers, std::span<const Transition> batch,
                       double tail_bootstrap, const PpoHyper& hyper, Rng& rng);

struct IterationLog {
  int iteration = 0;
  long steps = 0;
  int episodes_completed = 0;
  double mean_episode_reward = 0.0;  // mean R_AV of the last 10 finished episodes
  UpdateStats stats;
};

struct TrainResult {
  Policy policy;
  std::vector<IterationLog> log;
};

// PPO over the given scenarios (episode e runs scenarios[e % n]).
// Log length is total_steps / batch_size.
TrainResult ppo_train(std::span<const sim::ScenarioConfig> scenarios, const PpoHyper& hyper, std::uint64_t seed);
TrainResult ppo_train(const sim::ScenarioConfig& scenario, const PpoHyper& hyper, std::uint64_t seed);

// Mean episodic R_AV over n episodes with per-episode seeds derived from `seed`.
double evaluate(const Policy& policy, const sim::ScenarioConfig& scenario, int episodes, std::uint64_t seed);

nlohmann::json to_json(const Policy& policy);
Policy policy_from_json(const nlohmann::json& j);

}  // namespace remav::policy
