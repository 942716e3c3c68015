#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "remav/nn.hpp"
#include "remav/policy.hpp"
#include "remav/sim.hpp"
#include "remav/trajectory.hpp"

namespace remav::airl {

inline constexpr std::size_t kPairSize = sim::kObservationSize + sim::kActionCount;
using EncodedPair = std::array<double, kPairSize>;

// Observation followed by the one-hot action.
EncodedPair encode_pair(const sim::Observation& obs, int action);

// ln(clamp(d)) - ln(1 - clamp(d)).
double reward_from_prob(double d);

// +-ln((1 - 1e-7) / 1e-7)
double reward_bound();

struct RewardModel {
  nn::DenseNet discriminator;  // 21 -> 100 -> 50 -> 20 -> 1 sigmoid
  sim::ScenarioKind scenario = sim::ScenarioKind::Straight;
  int rounds = 0;
  std::uint64_t seed = 0;

  static RewardModel initial(sim::ScenarioKind scenario, std::uint64_t seed);

  double probability(const sim::Observation& obs, int action) const;
  double reward(const sim::Observation& obs, int action) const;

  bool operator==(const RewardModel&) const = default;
};

nlohmann::json to_json(const RewardModel& model);
RewardModel reward_model_from_json(const nlohmann::json& j);

struct AirlHyper {
  int buffer_capacity = 128;
  int disc_updates = 4;
  int training_frequency = 32;
  int episodes = 500;
  long max_rounds = 0;  // 0 = bounded by `episodes` only
  double lr = 6e-4;
  int batch = 128;  // discriminator minibatch, half expert and half generator
  double gamma = 0.99;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double gae_lambda = 0.95;
  int minibatch = 64;
  int epochs = 8;
  int episode_steps = 2000;
  // Scales r_psi before the generator's advantage estimation.
  double reward_scale = 0.1;

  void validate() const;
  policy::PpoHyper generator_ppo() const;
  bool operator==(const AirlHyper&) const = default;
};

nlohmann::json to_json(const AirlHyper& h);
AirlHyper airl_hyper_from_json(const nlohmann::json& j, AirlHyper defaults = {});

struct RoundLog {
  long round = 0;
  double disc_loss = 0.0;
  double disc_accuracy = 0.0;
  double mean_r_expert = 0.0;
  double mean_r_generator = 0.0;
};

void write_curves_csv(std::ostream& out, std::span<const RoundLog> curves);

// Replaces the learned generator with fixed action probabilities (no PPO
// update is applied). Used to test the discriminator in isolation.
using ScriptedGenerator = std::function<std::vector<double>(const sim::Observation&)>;

struct AirlResult {
  RewardModel model;
  policy::Policy generator;
  std::vector<RoundLog> curves;
  long generator_steps = 0;
  int generator_episodes = 0;
};

// Each round: `training_frequency` generator steps into the replay buffer,
// `disc_updates` discriminator steps on balanced minibatches, then the
// buffer is relabelled with r_psi and the generator gets a PPO update.
// Stops once `episodes` generator episodes have finished or after
// `max_rounds` rounds, whichever is first.
AirlResult train_airl(const trajectory::TrajectorySet& expert, const sim::ScenarioConfig& scenario,
                      const AirlHyper& hyper, std::uint64_t seed, const ScriptedGenerator& scripted = {});

// Fixed-capacity FIFO; pushing into a full buffer evicts the oldest entry.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    if (capacity_ == 0) return;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // i = 0 is the oldest entry.
  T& at(std::size_t i) { return items_[(head_ + i) % items_.size()]; }
  const T& at(std::size_t i) const { return items_[(head_ + i) % items_.size()]; }
  std::vector<T> ordered() const {
    std::vector<T> out;
    out.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(at(i));
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<T> items_;
};

}  // namespace remav::airl
