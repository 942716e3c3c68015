#include "remav/airl.hpp"

#include <cmath>
#include <ostream>

#include "remav/error.hpp"

namespace remav::airl {

using nlohmann::json;

EncodedPair encode_pair(const sim::Observation& obs, int action) {
  if (action < 0 || action >= sim::kActionCount) {
    throw ValidationError("action index " + std::to_string(action) + " outside 0..8");
  }
  EncodedPair out{};
  std::copy(obs.begin(), obs.end(), out.begin());
  out[sim::kObservationSize + static_cast<std::size_t>(action)] = 1.0;
  return out;
}

double reward_from_prob(double d) {
  const double c = nn::clamp_prob(d);
  return std::log(c) - std::log1p(-c);
}

double reward_bound() { return std::log1p(-nn::kProbClamp) - std::log(nn::kProbClamp); }

RewardModel RewardModel::initial(sim::ScenarioKind scenario, std::uint64_t seed) {
  static constexpr std::size_t widths[] = {kPairSize, 100, 50, 20, 1};
  Rng rng(derive_seed(seed, Stream::Init));
  RewardModel m;
  m.discriminator = nn::DenseNet::glorot(widths, nn::Activation::Relu, nn::Activation::Sigmoid, rng);
  m.scenario = scenario;
  m.seed = seed;
  return m;
}

double RewardModel::probability(const sim::Observation& obs, int action) const {
  const auto x = encode_pair(obs, action);
  return nn::clamp_prob(nn::forward(discriminator, x).front());
}

double RewardModel::reward(const sim::Observation& obs, int action) const {
  return reward_from_prob(probability(obs, action));
}

json to_json(const RewardModel& model) {
  return {{"format", "remav-reward-model"},
          {"version", 1},
          {"scenario", sim::to_string(model.scenario)},
          {"rounds", model.rounds},
          {"seed", model.seed},
          {"clamp", nn::kProbClamp},
          {"discriminator", nn::to_json(model.discriminator)}};
}

RewardModel reward_model_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "remav-reward-model") throw FormatError("not a reward model record");
    if (j.at("version").get<int>() != 1) throw VersionError("unsupported reward model version");
    RewardModel m;
    m.scenario = sim::scenario_from_string(j.at("scenario").get<std::string>());
    m.rounds = j.at("rounds").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.discriminator = nn::from_json(j.at("discriminator"));
    if (m.discriminator.input_size() != kPairSize || m.discriminator.output_size() != 1) {
      throw FormatError("discriminator must map 21 inputs to 1 output");
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed reward model: ") + e.what());
  }
}

void AirlHyper::validate() const {
  if (buffer_capacity <= 0 || disc_updates <= 0 || training_frequency <= 0 || batch <= 0 || minibatch <= 0 ||
      epochs <= 0 || episode_steps <= 0) {
    throw ValidationError("airl sizes and counts must be positive");
  }
  if (batch % 2 != 0) throw ValidationError("airl.batch must be even so minibatches split evenly");
  if (episodes < 0 || max_rounds < 0) throw ValidationError("airl.episodes and airl.max_rounds must be non-negative");
  if (!(lr > 0.0) || !(clip > 0.0) || !(reward_scale > 0.0)) {
    throw ValidationError("airl.lr, airl.clip and airl.reward_scale must be positive");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("airl.gamma must lie in (0, 1]");
}

policy::PpoHyper AirlHyper::generator_ppo() const {
  policy::PpoHyper h;
  h.gamma = gamma;
  h.clip = clip;
  h.entropy_coef = entropy_coef;
  h.value_coef = value_coef;
  h.gae_lambda = gae_lambda;
  h.lr = lr;
  h.minibatch = minibatch;
  h.epochs = epochs;
  h.batch_size = buffer_capacity;
  h.reward_scale = reward_scale;
  return h;
}

json to_json(const AirlHyper& h) {
  return {{"buffer_capacity", h.buffer_capacity},
          {"disc_updates", h.disc_updates},
          {"training_frequency", h.training_frequency},
          {"episodes", h.episodes},
          {"max_rounds", h.max_rounds},
          {"lr", h.lr},
          {"batch", h.batch},
          {"gamma", h.gamma},
          {"clip", h.clip},
          {"entropy_coef", h.entropy_coef},
          {"value_coef", h.value_coef},
          {"gae_lambda", h.gae_lambda},
          {"minibatch", h.minibatch},
          {"epochs", h.epochs},
          {"episode_steps", h.episode_steps},
          {"reward_scale", h.reward_scale}};
}

AirlHyper airl_hyper_from_json(const json& j, AirlHyper h) {
  try {
    h.buffer_capacity = j.value("buffer_capacity", h.buffer_capacity);
    h.disc_updates = j.value("disc_updates", h.disc_updates);
    h.training_frequency = j.value("training_frequency", h.training_frequency);
    h.episodes = j.value("episodes", h.episodes);
    h.max_rounds = j.value("max_rounds", h.max_rounds);
    h.lr = j.value("lr", h.lr);
    h.batch = j.value("batch", h.batch);
    h.gamma = j.value("gamma", h.gamma);
    h.clip = j.value("clip", h.clip);
    h.entropy_coef = j.value("entropy_coef", h.entropy_coef);
    h.value_coef = j.value("value_coef", h.value_coef);
    h.gae_lambda = j.value("gae_lambda", h.gae_lambda);
    h.minibatch = j.value("minibatch", h.minibatch);
    h.epochs = j.value("epochs", h.epochs);
    h.episode_steps = j.value("episode_steps", h.episode_steps);
    h.reward_scale = j.value("reward_scale", h.reward_scale);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed airl hyperparameters: ") + e.what());
  }
  h.validate();
  return h;
}

void write_curves_csv(std::ostream& out, std::span<const RoundLog> curves) {
  out << "round,disc_loss,disc_accuracy,mean_r_expert,mean_r_generator\n";
  out.precision(17);
  for (const auto& r : curves) {
    out << r.round << ',' << r.disc_loss << ',' << r.disc_accuracy << ',' << r.mean_r_expert << ','
        << r.mean_r_generator << '\n';
  }
}

namespace {

struct Pair {
  sim::Observation observation;
  int action;
};

// One discriminator gradient step on a balanced minibatch. Returns the
// pre-update loss, accuracy and mean rewards of both halves.
RoundLog disc_step(RewardModel& model, nn::AdamState& adam, std::span<const Pair> expert,
                   std::span<const Pair> generated) {
  auto& net = model.discriminator;
  std::vector<double> grads(net.param_count(), 0.0);
  std::vector<double> d_expert;
  std::vector<double> d_generated;
  RoundLog log;
  double correct = 0.0;

  auto pass = [&](std::span<const Pair> half, bool is_expert, std::vector<double>& ds) {
    const double n = static_cast<double>(half.size());
    for (const auto& p : half) {
      const auto x = encode_pair(p.observation, p.action);
      const auto trace = nn::forward_trace(net, x);
      const double raw = trace.output().front();
      const double d = nn::clamp_prob(raw);
      ds.push_back(d);
      const bool inside = d == raw;
      double g = 0.0;
      if (inside) g = is_expert ? -1.0 / d / n : 1.0 / (1.0 - d) / n;
      if (g != 0.0) nn::backward_accumulate(net, trace, std::span<const double>(&g, 1), grads);
      if (is_expert ? d > 0.5 : d < 0.5) correct += 1.0;
      (is_expert ? log.mean_r_expert : log.mean_r_generator) += reward_from_prob(d) / n;
    }
  };
  pass(expert, true, d_expert);
  pass(generated, false, d_generated);
  log.disc_loss = nn::bce_pair_loss(d_expert, d_generated);
  log.disc_accuracy = correct / static_cast<double>(expert.size() + generated.size());
  if (!std::isfinite(log.disc_loss)) throw NumericError("discriminator loss is not finite");
  nn::adam_step(net, grads, adam);
  return log;
}

}  // namespace

AirlResult train_airl(const trajectory::TrajectorySet& expert, const sim::ScenarioConfig& scenario,
                      const AirlHyper& hyper, std::uint64_t seed, const ScriptedGenerator& scripted) {
  hyper.validate();
  scenario.validate();
  if (expert.header.scenario != scenario.kind) {
    throw ValidationError(std::string("expert trajectories are for ") + sim::to_string(expert.header.scenario) +
                          ", training scenario is " + sim::to_string(scenario.kind));
  }
  expert.validate();
  std::vector<Pair> expert_pairs;
  for (const auto& t : expert.trajectories) {
    for (const auto& s : t.steps) expert_pairs.push_back({s.observation, s.action});
  }
  if (expert_pairs.empty()) throw ValidationError("expert set holds no state-action pairs");

  AirlResult result;
  result.model = RewardModel::initial(scenario.kind, seed);
  result.generator = policy::Policy::generator(derive_seed(seed, Stream::Init, 1));
  const auto ppo = hyper.generator_ppo();
  policy::Optimizers gen_opt(result.generator, hyper.lr);
  nn::AdamState disc_opt(result.model.discriminator.param_count(), nn::AdamConfig{hyper.lr});
  Rng action_rng(derive_seed(seed, Stream::Action));
  Rng sample_rng(derive_seed(seed, Stream::Sampling));
  Rng update_rng(derive_seed(seed, Stream::Sampling, 1));

  ReplayBuffer<policy::Transition> buffer(static_cast<std::size_t>(hyper.buffer_capacity));
  std::uint64_t episode = 0;
  sim::WorldState world;
  sim::Observation obs{};
  int episode_step = 0;
  auto start_episode = [&] {
    world = sim::reset(scenario, derive_seed(seed, Stream::World, episode));
    obs = sim::observe(world);
    episode_step = 0;
  };
  start_episode();

  const std::size_t half = static_cast<std::size_t>(hyper.batch / 2);
  std::vector<Pair> expert_batch(half);
  std::vector<Pair> gen_batch(half);
  long round = 0;
  while (result.generator_episodes < hyper.episodes && (hyper.max_rounds == 0 || round < hyper.max_rounds)) {
    for (int s = 0; s < hyper.training_frequency; ++s) {
      policy::Transition tr;
      tr.observation = obs;
      if (scripted) {
        const auto probs = scripted(obs);
        tr.action = policy::act_from_probs(probs, policy::ActionMode::Sample, action_rng).action;
      } else {
        const auto choice = policy::act(result.generator, obs, action_rng);
        tr.action = choice.action;
        tr.log_prob = choice.log_prob;
        tr.value = policy::value(result.generator, obs);
      }
      const auto res = sim::step(world, sim::decode_action(tr.action));
      ++episode_step;
      ++result.generator_steps;
      if (res.outcome.terminal || episode_step >= hyper.episode_steps) {
        tr.episode_end = true;
        tr.terminal = res.outcome.collision() || res.outcome.goal_reached;
        if (!tr.terminal && !scripted) tr.bootstrap = policy::value(result.generator, res.observation);
        ++result.generator_episodes;
        ++episode;
        start_episode();
      } else {
        obs = res.observation;
      }
      buffer.push(tr);
    }

    RoundLog round_log;
    round_log.round = round;
    for (int u = 0; u < hyper.disc_updates; ++u) {
      for (auto& p : expert_batch) p = expert_pairs[sample_rng.index(expert_pairs.size())];
      for (auto& p : gen_batch) {
        const auto& tr = buffer.at(sample_rng.index(buffer.size()));
        p = {tr.observation, tr.action};
      }
      const RoundLog step_log = disc_step(result.model, disc_opt, expert_batch, gen_batch);
      const double w = 1.0 / hyper.disc_updates;
      round_log.disc_loss += w * step_log.disc_loss;
      round_log.disc_accuracy += w * step_log.disc_accuracy;
      round_log.mean_r_expert += w * step_log.mean_r_expert;
      round_log.mean_r_generator += w * step_log.mean_r_generator;
    }
    result.curves.push_back(round_log);

    if (!scripted) {
      for (std::size_t i = 0; i < buffer.size(); ++i) {
        auto& tr = buffer.at(i);
        tr.reward = hyper.reward_scale * result.model.reward(tr.observation, tr.action);
      }
      const auto batch = buffer.ordered();
      policy::ppo_update(result.generator, gen_opt, batch, policy::value(result.generator, obs), ppo, update_rng);
    }
    ++round;
  }
  result.model.rounds = static_cast<int>(round);
  return result;
}

}  // namespace remav::airl
