#include "remav/policy.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "remav/error.hpp"

namespace remav::policy {

using nn::Activation;

Policy Policy::create(std::span<const std::size_t> actor_widths, std::span<const std::size_t> critic_widths,
                      std::uint64_t seed) {
  Rng rng(seed);
  Policy p;
  p.actor = nn::DenseNet::glorot(actor_widths, Activation::Relu, Activation::Softmax, rng);
  p.critic = nn::DenseNet::glorot(critic_widths, Activation::Relu, Activation::Identity, rng);
  return p;
}

Policy Policy::av(std::uint64_t seed) {
  static constexpr std::size_t actor[] = {sim::kObservationSize, 64, 64, sim::kActionCount};
  static constexpr std::size_t critic[] = {sim::kObservationSize, 64, 64, 1};
  return create(actor, critic, seed);
}

Policy Policy::generator(std::uint64_t seed) {
  static constexpr std::size_t actor[] = {sim::kObservationSize, 20, 20, sim::kActionCount};
  static constexpr std::size_t critic[] = {sim::kObservationSize, 64, 64, 1};
  return create(actor, critic, seed);
}

Policy Policy::uniform() {
  Policy p;
  p.actor = nn::DenseNet({{sim::kObservationSize, sim::kActionCount, Activation::Softmax}});
  p.critic = nn::DenseNet({{sim::kObservationSize, 1, Activation::Identity}});
  return p;
}

ActResult act_from_probs(std::span<const double> probs, ActionMode mode, Rng& rng) {
  for (double p : probs) {
    if (!std::isfinite(p)) throw NumericError("actor produced a non-finite probability");
  }
  int chosen = 0;
  if (mode == ActionMode::Greedy) {
    for (std::size_t i = 1; i < probs.size(); ++i) {
      if (probs[i] > probs[static_cast<std::size_t>(chosen)]) chosen = static_cast<int>(i);
    }
  } else {
    const double u = rng.uniform01();
    double cumulative = 0.0;
    chosen = static_cast<int>(probs.size()) - 1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cumulative += probs[i];
      if (u < cumulative) {
        chosen = static_cast<int>(i);
        break;
      }
    }
    // u beyond the rounded total lands on the last action with mass.
    while (chosen > 0 && probs[static_cast<std::size_t>(chosen)] <= 0.0) --chosen;
  }
  return {chosen, std::log(probs[static_cast<std::size_t>(chosen)])};
}

ActResult act(const Policy& policy, std::span<const double> observation, Rng& rng) {
  for (double x : observation) {
    if (!std::isfinite(x)) throw NumericError("observation contains a non-finite component");
  }
  const auto probs = nn::forward(policy.actor, observation);
  return act_from_probs(probs, policy.mode, rng);
}

double value(const Policy& policy, std::span<const double> observation) {
  return nn::forward(policy.critic, observation).front();
}

void PpoHyper::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("ppo.gamma must lie in (0, 1]");
  if (!(clip > 0.0)) throw ValidationError("ppo.clip must be positive");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ValidationError("ppo.gae_lambda must lie in [0, 1]");
  if (!(lr > 0.0)) throw ValidationError("ppo.lr must be positive");
  if (minibatch <= 0 || epochs <= 0 || batch_size <= 0) {
    throw ValidationError("ppo.minibatch, ppo.epochs and ppo.batch_size must be positive");
  }
  if (total_steps < 0) throw ValidationError("ppo.total_steps must be non-negative");
  if (!(reward_scale > 0.0)) throw ValidationError("ppo.reward_scale must be positive");
}

nlohmann::json to_json(const PpoHyper& h) {
  return {{"gamma", h.gamma},       {"clip", h.clip},          {"entropy_coef", h.entropy_coef},
          {"value_coef", h.value_coef}, {"gae_lambda", h.gae_lambda}, {"lr", h.lr},
          {"minibatch", h.minibatch}, {"epochs", h.epochs},      {"batch_size", h.batch_size},
          {"total_steps", h.total_steps}, {"reward_scale", h.reward_scale}};
}

PpoHyper ppo_hyper_from_json(const nlohmann::json& j, PpoHyper h) {
  try {
    h.gamma = j.value("gamma", h.gamma);
    h.clip = j.value("clip", h.clip);
    h.entropy_coef = j.value("entropy_coef", h.entropy_coef);
    h.value_coef = j.value("value_coef", h.value_coef);
    h.gae_lambda = j.value("gae_lambda", h.gae_lambda);
    h.lr = j.value("lr", h.lr);
    h.minibatch = j.value("minibatch", h.minibatch);
    h.epochs = j.value("epochs", h.epochs);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.total_steps = j.value("total_steps", h.total_steps);
    h.reward_scale = j.value("reward_scale", h.reward_scale);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed ppo hyperparameters: ") + e.what());
  }
  h.validate();
  return h;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                      double gamma, double lambda) {
  if (rewards.empty()) throw ValidationError("compute_gae needs a non-empty sequence");
  if (rewards.size() != values.size()) throw DimensionError("gae values", rewards.size(), values.size());
  const std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap;
    const double delta = rewards[t] + gamma * next_value - values[t];
    running = delta + gamma * lambda * running;
    out.advantages[t] = running;
    out.returns[t] = running + values[t];
  }
  return out;
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : advantages) a = sd > 1e-12 ? (a - mean) / sd : 0.0;
}

Surrogate clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  Surrogate s;
  s.clip_active = clipped != ratio;
  const double unclipped_term = ratio * advantage;
  const double clipped_term = clipped * advantage;
  if (unclipped_term <= clipped_term) {
    s.objective = unclipped_term;
    s.d_ratio = advantage;
  } else {
    // The clipped branch is constant in the ratio.
    s.objective = clipped_term;
    s.d_ratio = 0.0;
  }
  return s;
}

Optimizers::Optimizers(const Policy& policy, double lr)
    : actor(policy.actor.param_count(), nn::AdamConfig{lr}), critic(policy.critic.param_count(), nn::AdamConfig{lr}) {}

UpdateStats ppo_update(Policy& policy, Optimizers& optimizers, std::span<const Transition> batch,
                       double tail_bootstrap, const PpoHyper& hyper, Rng& rng) {
  UpdateStats stats;
  if (batch.empty()) return stats;
  const std::size_t n = batch.size();

  std::vector<double> advantages(n);
  std::vector<double> returns(n);
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = begin;
    while (end + 1 < n && !batch[end].episode_end) ++end;
    std::vector<double> rewards;
    std::vector<double> values;
    for (std::size_t i = begin; i <= end; ++i) {
      rewards.push_back(batch[i].reward);
      values.push_back(batch[i].value);
    }
    double bootstrap = tail_bootstrap;
    if (batch[end].episode_end) bootstrap = batch[end].terminal ? 0.0 : batch[end].bootstrap;
    const auto gae = compute_gae(rewards, values, bootstrap, hyper.gamma, hyper.gae_lambda);
    std::copy(gae.advantages.begin(), gae.advantages.end(), advantages.begin() + static_cast<std::ptrdiff_t>(begin));
    std::copy(gae.returns.begin(), gae.returns.end(), returns.begin() + static_cast<std::ptrdiff_t>(begin));
    begin = end + 1;
  }
  normalize_advantages(advantages);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> actor_grad(policy.actor.param_count());
  std::vector<double> critic_grad(policy.critic.param_count());
  std::vector<double> upstream(policy.actor.output_size());
  const std::size_t mb = static_cast<std::size_t>(hyper.minibatch);
  double samples = 0.0;
  double clipped = 0.0;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    // Fisher-Yates with the module generator keeps the shuffle platform-independent.
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t stop = std::min(n, start + mb);
      const double count = static_cast<double>(stop - start);
      std::fill(actor_grad.begin(), actor_grad.end(), 0.0);
      std::fill(critic_grad.begin(), critic_grad.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const Transition& tr = batch[order[k]];
        const double adv = advantages[order[k]];

        const auto trace = nn::forward_trace(policy.actor, tr.observation);
        const auto& probs = trace.output();
        const std::size_t a = static_cast<std::size_t>(tr.action);
        const double p_a = std::max(probs[a], 1e-300);
        const double log_p = std::log(p_a);
        const double ratio = std::exp(log_p - tr.log_prob);
        const Surrogate s = clipped_surrogate(ratio, adv, hyper.clip);
        double entropy = 0.0;
        for (double p : probs) entropy -= p > 0.0 ? p * std::log(p) : 0.0;
        const double loss = -s.objective - hyper.entropy_coef * entropy;
        if (!std::isfinite(loss)) {
          throw NumericError("ppo policy loss diverged (ratio " + std::to_string(ratio) + ", advantage " +
                             std::to_string(adv) + ")");
        }
        // d loss / d probs
        for (std::size_t i = 0; i < upstream.size(); ++i) {
          upstream[i] = hyper.entropy_coef * (std::log(std::max(probs[i], 1e-300)) + 1.0) / count;
        }
        upstream[a] += -s.d_ratio * ratio / p_a / count;
        nn::backward_accumulate(policy.actor, trace, upstream, actor_grad);

        const auto vtrace = nn::forward_trace(policy.critic, tr.observation);
        const double err = vtrace.output().front() - returns[order[k]];
        if (!std::isfinite(err)) throw NumericError("ppo value loss diverged");
        const double vgrad = hyper.value_coef * err / count;
        nn::backward_accumulate(policy.critic, vtrace, std::span<const double>(&vgrad, 1), critic_grad);

        stats.policy_loss += -s.objective;
        stats.value_loss += 0.5 * err * err;
        stats.entropy += entropy;
        stats.approx_kl += tr.log_prob - log_p;
        clipped += s.clip_active ? 1.0 : 0.0;
        samples += 1.0;
      }
      nn::adam_step(policy.actor, actor_grad, optimizers.actor);
      nn::adam_step(policy.critic, critic_grad, optimizers.critic);
    }
  }
  stats.policy_loss /= samples;
  stats.value_loss /= samples;
  stats.entropy /= samples;
  stats.approx_kl /= samples;
  stats.clip_fraction = clipped / samples;
  return stats;
}

TrainResult ppo_train(std::span<const sim::ScenarioConfig> scenarios, const PpoHyper& hyper, std::uint64_t seed) {
  hyper.validate();
  if (scenarios.empty()) throw ValidationError("ppo_train needs at least one scenario");
  for (const auto& s : scenarios) s.validate();

  TrainResult result;
  result.policy = Policy::av(derive_seed(seed, Stream::Init));
  const long iterations = hyper.total_steps / hyper.batch_size;
  if (iterations == 0) return result;

  Policy& policy = result.policy;
  Optimizers optimizers(policy, hyper.lr);
  Rng action_rng(derive_seed(seed, Stream::Action));
  Rng update_rng(derive_seed(seed, Stream::Sampling));

  std::uint64_t episode = 0;
  sim::WorldState world;
  sim::Observation obs{};
  double episode_reward = 0.0;
  std::deque<double> recent;
  auto start_episode = [&] {
    world = sim::reset(scenarios[episode % scenarios.size()], derive_seed(seed, Stream::World, episode));
    obs = sim::observe(world);
    episode_reward = 0.0;
  };
  start_episode();

  std::vector<Transition> batch;
  batch.reserve(static_cast<std::size_t>(hyper.batch_size));
  long steps = 0;
  for (long it = 0; it < iterations; ++it) {
    batch.clear();
    int finished = 0;
    for (int s = 0; s < hyper.batch_size; ++s) {
      Transition tr;
      tr.observation = obs;
      const auto choice = act(policy, obs, action_rng);
      tr.action = choice.action;
      tr.log_prob = choice.log_prob;
      tr.value = value(policy, obs);
      const auto res = sim::step(world, sim::decode_action(choice.action));
      const double r = sim::av_reward(res.outcome);
      episode_reward += r;
      tr.reward = r * hyper.reward_scale;
      ++steps;
      if (res.outcome.terminal) {
        tr.episode_end = true;
        tr.terminal = res.outcome.collision() || res.outcome.goal_reached;
        if (!tr.terminal) tr.bootstrap = value(policy, res.observation);
        recent.push_back(episode_reward);
        if (recent.size() > 10) recent.pop_front();
        ++finished;
        ++episode;
        start_episode();
      } else {
        obs = res.observation;
      }
      batch.push_back(tr);
    }
    IterationLog entry;
    entry.iteration = static_cast<int>(it);
    entry.stats = ppo_update(policy, optimizers, batch, value(policy, obs), hyper, update_rng);
    entry.steps = steps;
    entry.episodes_completed = finished;
    entry.mean_episode_reward =
        recent.empty() ? 0.0 : std::accumulate(recent.begin(), recent.end(), 0.0) / static_cast<double>(recent.size());
    result.log.push_back(entry);
  }
  return result;
}

TrainResult ppo_train(const sim::ScenarioConfig& scenario, const PpoHyper& hyper, std::uint64_t seed) {
  return ppo_train(std::span<const sim::ScenarioConfig>(&scenario, 1), hyper, seed);
}

double evaluate(const Policy& policy, const sim::ScenarioConfig& scenario, int episodes, std::uint64_t seed) {
  if (episodes <= 0) throw ValidationError("evaluate needs at least one episode");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const auto idx = static_cast<std::uint64_t>(e);
    auto world = sim::reset(scenario, derive_seed(seed, Stream::World, idx));
    Rng rng(derive_seed(seed, Stream::Action, idx));
    auto obs = sim::observe(world);
    while (!world.terminal) {
      const auto choice = act(policy, obs, rng);
      const auto res = sim::step(world, sim::decode_action(choice.action));
      total += sim::av_reward(res.outcome);
      obs = res.observation;
    }
  }
  return total / episodes;
}

nlohmann::json to_json(const Policy& policy) {
  return {{"actor", nn::to_json(policy.actor)},
          {"critic", nn::to_json(policy.critic)},
          {"action_mode", policy.mode == ActionMode::Sample ? "sample" : "greedy"}};
}

Policy policy_from_json(const nlohmann::json& j) {
  try {
    Policy p;
    p.actor = nn::from_json(j.at("actor"));
    p.critic = nn::from_json(j.at("critic"));
    p.mode = j.value("action_mode", std::string("sample")) == "greedy" ? ActionMode::Greedy : ActionMode::Sample;
    if (p.actor.input_size() != sim::kObservationSize || p.actor.output_size() != sim::kActionCount) {
      throw FormatError("policy actor must map 12 features to 9 actions");
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed policy record: ") + e.what());
  }
}

}  // namespace remav::policy
