#ifndef DISTILLERY_PPO_HPP_
#define DISTILLERY_PPO_HPP_

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "distillery/envs.hpp"
#include "distillery/nn.hpp"
#include "distillery/rng.hpp"

namespace distillery::ppo {

using nn::Matrix;
using nn::Vector;

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;  // GAE trace decay
  double clip = 0.1;
  int update_epochs = 10;
  int minibatch_size = 32;
  int num_actors = 16;
  int horizon = 128;
  double stepsize = 3e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  std::int64_t total_env_steps = 16 * 128 * 200;
  // Leading rollouts used only to fit the value head by ridge regression on
  // the body features; the actor stays frozen. Counted against total_env_steps.
  int critic_warmup_updates = 0;

  void validate() const;
  std::int64_t steps_per_update() const {
    return static_cast<std::int64_t>(num_actors) * horizon;
  }
  // Whole updates that fit in total_env_steps.
  std::int64_t update_count() const { return total_env_steps / steps_per_update(); }
};

// Transitions stored actor-major: row actor * horizon + t.
struct RolloutBuffer {
  int num_actors = 0;
  int horizon = 0;
  int obs_dim = 0;
  Matrix observations;
  std::vector<int> actions;
  Vector log_probs;
  Vector rewards;
  std::vector<std::uint8_t> dones;
  Vector values;
  Vector bootstrap_values;  // value of each actor's state after the last step
  // V(s') for transitions cut off by the step cap, zero elsewhere. GAE adds
  // gamma * truncation_values[k] to the reward so a cap is not a terminal.
  Vector truncation_values;

  static RolloutBuffer empty(int num_actors, int horizon, int obs_dim);
  Eigen::Index index(int actor, int t) const {
    return static_cast<Eigen::Index>(actor) * horizon + t;
  }
  Eigen::Index size() const { return static_cast<Eigen::Index>(num_actors) * horizon; }
};

// A set of environments stepped in lockstep, each with its own environment
// and action-sampling streams. Episodes auto-reset and carry over between
// rollouts.
class ActorPool {
 public:
  ActorPool(const envs::EnvSpec& spec, int num_actors, const Rng& root);

  int size() const { return static_cast<int>(envs_.size()); }
  const envs::EnvSpec& spec() const { return spec_; }

  // Returns of episodes finished since the pool was created, most recent last,
  // capped at the last `window` entries.
  const std::deque<double>& recent_returns() const { return recent_returns_; }
  std::int64_t completed_episodes() const { return completed_episodes_; }

 private:
  friend RolloutBuffer collect_rollout(const nn::ActorCriticNet&, ActorPool&, int);

  static constexpr std::size_t kWindow = 100;

  envs::EnvSpec spec_;
  std::vector<std::unique_ptr<envs::Environment>> envs_;
  std::vector<Rng> action_rngs_;
  std::vector<Vector> current_obs_;
  std::vector<double> running_return_;
  std::deque<double> recent_returns_;
  std::int64_t completed_episodes_ = 0;
};

RolloutBuffer collect_rollout(const nn::ActorCriticNet& policy, ActorPool& pool, int horizon);

struct GaeResult {
  Vector advantages;
  Vector returns;
};

// delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) + gamma C_t - V(s_t)
// A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
// Per actor, truncated at the horizon with the stored bootstrap value. C_t is
// truncation_values[t] (zero unless the step cap ended the episode there).
GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

// (a - mean) / max(std, 1e-8), population std.
Vector normalize_advantages(const Vector& advantages);

struct MinibatchLoss {
  double total = 0.0;
  double policy_loss = 0.0;   // -mean clipped surrogate
  double value_loss = 0.0;    // mean squared error
  double entropy = 0.0;       // mean policy entropy
  double clip_fraction = 0.0;
  Matrix dlogits;             // d total / d logits
  Vector dvalues;             // d total / d values
};

// Clipped-surrogate loss for one minibatch, evaluated on a forward pass:
// total = -mean(min(rho A, clip(rho) A)) + value_coef mean((V - R)^2)
//         - entropy_coef mean(H).
MinibatchLoss ppo_minibatch_loss(const nn::ForwardResult& fwd, const std::vector<int>& actions,
                                 const Vector& behavior_log_probs, const Vector& advantages,
                                 const Vector& returns, const PpoConfig& config);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  int minibatches = 0;
};

// update_epochs passes over shuffled minibatches, advantages normalized over
// the whole buffer first.
UpdateStats ppo_update(nn::ActorCriticNet& policy, nn::AdamState& adam,
                       const RolloutBuffer& buffer, const GaeResult& gae,
                       const PpoConfig& config, Rng& shuffle_rng);

// Least-squares fit of the value head to `targets`, with the body held fixed:
// minimizes |F w + b - y|^2 + ridge * (|w|^2 + b^2) over the final features F.
void fit_value_head(nn::ActorCriticNet& net, const Matrix& observations, const Vector& targets,
                    double ridge = 1e-3);

struct CurvePoint {
  std::int64_t env_steps = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::int64_t episodes = 0;
};

struct TrainResult {
  nn::ActorCriticNet policy;
  std::vector<CurvePoint> curve;
  std::int64_t env_steps = 0;
};

nn::Topology topology_for(const envs::EnvSpec& spec, nn::CapacityTier tier,
                          const nn::TierWidths& widths = {});

// collect -> GAE -> update until total_env_steps is spent. Starts from
// `initial` when given, otherwise from a seeded fresh network.
TrainResult train(const envs::EnvSpec& spec, const nn::Topology& topology,
                  const PpoConfig& config, std::uint64_t seed,
                  const nn::ActorCriticNet* initial = nullptr);

TrainResult train(const envs::EnvSpec& spec, nn::CapacityTier tier, const PpoConfig& config,
                  std::uint64_t seed, const nn::TierWidths& widths = {});

}  // namespace distillery::ppo

#endif  // DISTILLERY_PPO_HPP_
