#include "distillery/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "distillery/errors.hpp"

namespace distillery::ppo {

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorKind::kConfig, "ppo.gamma must lie in (0, 1]");
  if (!(lambda > 0.0 && lambda <= 1.0)) fail(ErrorKind::kConfig, "ppo.lambda must lie in (0, 1]");
  if (!(clip > 0.0)) fail(ErrorKind::kConfig, "ppo.clip must be positive");
  if (update_epochs < 1) fail(ErrorKind::kConfig, "ppo.update_epochs must be at least 1");
  if (minibatch_size < 1) fail(ErrorKind::kConfig, "ppo.minibatch_size must be at least 1");
  if (num_actors < 1) fail(ErrorKind::kConfig, "ppo.num_actors must be at least 1");
  if (horizon < 1) fail(ErrorKind::kConfig, "ppo.horizon must be at least 1");
  if (!(stepsize > 0.0)) fail(ErrorKind::kConfig, "ppo.stepsize must be positive");
  if (value_coef < 0.0 || entropy_coef < 0.0)
    fail(ErrorKind::kConfig, "ppo loss coefficients must be non-negative");
  if (critic_warmup_updates < 0)
    fail(ErrorKind::kConfig, "ppo.critic_warmup_updates must be non-negative");
  if (total_env_steps < 0) fail(ErrorKind::kConfig, "ppo.total_env_steps must be non-negative");
  if (steps_per_update() % minibatch_size != 0)
    fail(ErrorKind::kConfig, "ppo.num_actors * ppo.horizon must be divisible by ppo.minibatch_size");
}

RolloutBuffer RolloutBuffer::empty(int num_actors, int horizon, int obs_dim) {
  RolloutBuffer b;
  b.num_actors = num_actors;
  b.horizon = horizon;
  b.obs_dim = obs_dim;
  const Eigen::Index n = static_cast<Eigen::Index>(num_actors) * horizon;
  b.observations = Matrix::Zero(n, obs_dim);
  b.actions.assign(static_cast<std::size_t>(n), 0);
  b.log_probs = Vector::Zero(n);
  b.rewards = Vector::Zero(n);
  b.dones.assign(static_cast<std::size_t>(n), 0);
  b.values = Vector::Zero(n);
  b.bootstrap_values = Vector::Zero(num_actors);
  b.truncation_values = Vector::Zero(n);
  return b;
}

ActorPool::ActorPool(const envs::EnvSpec& spec, int num_actors, const Rng& root) : spec_(spec) {
  if (num_actors < 1) fail(ErrorKind::kConfig, "actor pool needs at least one actor");
  const Rng env_root = root.substream("env");
  const Rng action_root = root.substream("action");
  for (int i = 0; i < num_actors; ++i) {
    envs_.push_back(envs::make_environment(spec, env_root.substream(static_cast<std::uint64_t>(i))));
    action_rngs_.push_back(action_root.substream(static_cast<std::uint64_t>(i)));
    current_obs_.push_back(envs_.back()->reset());
    running_return_.push_back(0.0);
  }
}

RolloutBuffer collect_rollout(const nn::ActorCriticNet& policy, ActorPool& pool, int horizon) {
  if (horizon < 1) fail(ErrorKind::kConfig, "horizon must be at least 1");
  if (policy.obs_dim() != pool.spec().obs_dim() ||
      policy.action_count() != pool.spec().action_count())
    fail(ErrorKind::kConfig, "policy shape " + policy.topology().describe() +
                                 " does not match environment " + pool.spec().describe());
  const int n = pool.size();
  RolloutBuffer buffer = RolloutBuffer::empty(n, horizon, pool.spec().obs_dim());
  Matrix batch(n, pool.spec().obs_dim());
  std::vector<std::pair<Eigen::Index, Vector>> truncated;

  for (int t = 0; t < horizon; ++t) {
    for (int i = 0; i < n; ++i) batch.row(i) = pool.current_obs_[i].transpose();
    const nn::ForwardResult fwd = nn::forward(policy, batch);
    for (int i = 0; i < n; ++i) {
      const Vector logits = fwd.logits.row(i).transpose();
      const Vector probs = nn::softmax(logits);
      const Vector log_probs = nn::log_softmax(logits);
      const auto action = static_cast<int>(sample_categorical(
          std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
          pool.action_rngs_[i]));

      envs::StepResult step;
      try {
        step = pool.envs_[i]->step(action);
      } catch (const Error& e) {
        throw Error(e.kind(), "actor " + std::to_string(i) + ": " + e.what());
      }

      const Eigen::Index k = buffer.index(i, t);
      buffer.observations.row(k) = pool.current_obs_[i].transpose();
      buffer.actions[k] = action;
      buffer.log_probs[k] = log_probs[action];
      buffer.rewards[k] = step.reward;
      buffer.dones[k] = step.done ? 1 : 0;
      buffer.values[k] = fwd.values[i];

      if (step.truncated) truncated.emplace_back(k, step.observation);
      pool.running_return_[i] += step.reward;
      if (step.done) {
        pool.recent_returns_.push_back(pool.running_return_[i]);
        if (pool.recent_returns_.size() > ActorPool::kWindow) pool.recent_returns_.pop_front();
        ++pool.completed_episodes_;
        pool.running_return_[i] = 0.0;
        pool.current_obs_[i] = pool.envs_[i]->reset();
      } else {
        pool.current_obs_[i] = step.observation;
      }
    }
  }

  for (int i = 0; i < n; ++i) batch.row(i) = pool.current_obs_[i].transpose();
  buffer.bootstrap_values = nn::forward(policy, batch).values;
  if (!truncated.empty()) {
    Matrix finals(static_cast<Eigen::Index>(truncated.size()), pool.spec().obs_dim());
    for (std::size_t j = 0; j < truncated.size(); ++j)
      finals.row(static_cast<Eigen::Index>(j)) = truncated[j].second.transpose();
    const Vector v = nn::forward(policy, finals).values;
    for (std::size_t j = 0; j < truncated.size(); ++j)
      buffer.truncation_values[truncated[j].first] = v[static_cast<Eigen::Index>(j)];
  }
  return buffer;
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda) {
  const Eigen::Index n = buffer.size();
  if (buffer.rewards.size() != n || buffer.values.size() != n ||
      static_cast<Eigen::Index>(buffer.dones.size()) != n ||
      buffer.bootstrap_values.size() != buffer.num_actors ||
      (buffer.truncation_values.size() != 0 && buffer.truncation_values.size() != n))
    fail(ErrorKind::kConfig, "rollout buffer arrays have inconsistent shapes");

  GaeResult out{Vector::Zero(n), Vector::Zero(n)};
  for (int actor = 0; actor < buffer.num_actors; ++actor) {
    double next_value = buffer.bootstrap_values[actor];
    double next_advantage = 0.0;
    for (int t = buffer.horizon - 1; t >= 0; --t) {
      const Eigen::Index k = buffer.index(actor, t);
      const double not_done = buffer.dones[k] ? 0.0 : 1.0;
      const double cut = buffer.truncation_values.size() ? buffer.truncation_values[k] : 0.0;
      const double delta =
          buffer.rewards[k] + gamma * (next_value * not_done + cut) - buffer.values[k];
      next_advantage = delta + gamma * lambda * not_done * next_advantage;
      out.advantages[k] = next_advantage;
      out.returns[k] = next_advantage + buffer.values[k];
      next_value = buffer.values[k];
    }
  }
  return out;
}

Vector normalize_advantages(const Vector& advantages) {
  if (advantages.size() == 0) return advantages;
  const double mean = advantages.mean();
  const double var = (advantages.array() - mean).square().mean();
  const double std = std::max(std::sqrt(var), 1e-8);
  return ((advantages.array() - mean) / std).matrix();
}

MinibatchLoss ppo_minibatch_loss(const nn::ForwardResult& fwd, const std::vector<int>& actions,
                                 const Vector& behavior_log_probs, const Vector& advantages,
                                 const Vector& returns, const PpoConfig& config) {
  const Eigen::Index m = fwd.logits.rows();
  if (static_cast<Eigen::Index>(actions.size()) != m || behavior_log_probs.size() != m ||
      advantages.size() != m || returns.size() != m)
    fail(ErrorKind::kConfig, "minibatch arrays have inconsistent lengths");
  const double inv_m = 1.0 / static_cast<double>(m);

  MinibatchLoss loss;
  loss.dlogits = Matrix::Zero(m, fwd.logits.cols());
  loss.dvalues = Vector::Zero(m);
  double surrogate_sum = 0.0;
  double value_sum = 0.0;
  double entropy_sum = 0.0;
  int clipped = 0;

  for (Eigen::Index i = 0; i < m; ++i) {
    const Vector logits = fwd.logits.row(i).transpose();
    const Vector log_p = nn::log_softmax(logits);
    const Vector p = log_p.array().exp().matrix();
    const int a = actions[i];
    const double ratio = std::exp(log_p[a] - behavior_log_probs[i]);
    const double adv = advantages[i];

    const double unclipped = ratio * adv;
    const double clipped_ratio = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    const double clipped_obj = clipped_ratio * adv;
    surrogate_sum += std::min(unclipped, clipped_obj);
    if (std::abs(ratio - 1.0) > config.clip) ++clipped;
    // The min selects the unclipped branch unless clipping binds.
    const double dsurr_dratio = unclipped <= clipped_obj ? adv : 0.0;

    const double h = -(p.array() * log_p.array()).sum();
    entropy_sum += h;

    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double indicator = j == a ? 1.0 : 0.0;
      const double dsurr = dsurr_dratio * ratio * (indicator - p[j]);
      const double dentropy = -p[j] * (log_p[j] + h);
      loss.dlogits(i, j) = inv_m * (-dsurr - config.entropy_coef * dentropy);
    }

    const double err = fwd.values[i] - returns[i];
    value_sum += err * err;
    loss.dvalues[i] = inv_m * 2.0 * config.value_coef * err;
  }

  loss.policy_loss = -surrogate_sum * inv_m;
  loss.value_loss = value_sum * inv_m;
  loss.entropy = entropy_sum * inv_m;
  loss.clip_fraction = clipped * inv_m;
  loss.total = loss.policy_loss + config.value_coef * loss.value_loss -
               config.entropy_coef * loss.entropy;
  return loss;
}

UpdateStats ppo_update(nn::ActorCriticNet& policy, nn::AdamState& adam,
                       const RolloutBuffer& buffer, const GaeResult& gae,
                       const PpoConfig& config, Rng& shuffle_rng) {
  const Eigen::Index n = buffer.size();
  if (gae.advantages.size() != n || gae.returns.size() != n)
    fail(ErrorKind::kConfig, "advantages do not match the rollout buffer");
  if (n % config.minibatch_size != 0)
    fail(ErrorKind::kConfig, "buffer size must be divisible by the minibatch size");

  const Vector advantages = normalize_advantages(gae.advantages);
  const Eigen::Index mb = config.minibatch_size;
  std::vector<std::size_t> order(static_cast<std::size_t>(n));

  Matrix obs(mb, buffer.obs_dim);
  std::vector<int> actions(static_cast<std::size_t>(mb));
  Vector old_log_probs(mb), adv(mb), ret(mb);
  UpdateStats stats;

  for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, shuffle_rng);
    for (Eigen::Index start = 0; start < n; start += mb) {
      for (Eigen::Index i = 0; i < mb; ++i) {
        const auto k = static_cast<Eigen::Index>(order[static_cast<std::size_t>(start + i)]);
        obs.row(i) = buffer.observations.row(k);
        actions[static_cast<std::size_t>(i)] = buffer.actions[static_cast<std::size_t>(k)];
        old_log_probs[i] = buffer.log_probs[k];
        adv[i] = advantages[k];
        ret[i] = gae.returns[k];
      }
      const nn::ForwardResult fwd = nn::forward(policy, obs);
      const MinibatchLoss loss = ppo_minibatch_loss(fwd, actions, old_log_probs, adv, ret, config);
      if (!std::isfinite(loss.total))
        fail(ErrorKind::kNumeric, "non-finite PPO loss; update aborted");
      const nn::Gradients grads = nn::backward(policy, fwd.cache, loss.dlogits, loss.dvalues);
      nn::adam_step(policy, grads, adam, config.stepsize);

      stats.policy_loss += loss.policy_loss;
      stats.value_loss += loss.value_loss;
      stats.entropy += loss.entropy;
      stats.clip_fraction += loss.clip_fraction;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double k = 1.0 / stats.minibatches;
    stats.policy_loss *= k;
    stats.value_loss *= k;
    stats.entropy *= k;
    stats.clip_fraction *= k;
  }
  return stats;
}

void fit_value_head(nn::ActorCriticNet& net, const Matrix& observations, const Vector& targets,
                    double ridge) {
  if (observations.rows() != targets.size())
    fail(ErrorKind::kConfig, "value targets do not match the observations");
  if (!(ridge > 0.0)) fail(ErrorKind::kDomain, "ridge must be positive");
  const nn::ForwardResult fwd = nn::forward(net, observations);
  const Matrix& features = fwd.cache.layer_inputs.back();
  Matrix x(features.rows(), features.cols() + 1);
  x << features, Vector::Ones(features.rows());
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  const Vector w = gram.ldlt().solve(x.transpose() * targets);
  if (!w.allFinite()) fail(ErrorKind::kNumeric, "value-head regression produced non-finite weights");
  nn::DenseLayer& head = net.mutable_value_head();
  head.weight.row(0) = w.head(features.cols()).transpose();
  head.bias[0] = w[features.cols()];
}

nn::Topology topology_for(const envs::EnvSpec& spec, nn::CapacityTier tier,
                          const nn::TierWidths& widths) {
  return nn::make_topology(spec.obs_dim(), spec.action_count(), widths.widths(tier));
}

TrainResult train(const envs::EnvSpec& spec, const nn::Topology& topology,
                  const PpoConfig& config, std::uint64_t seed,
                  const nn::ActorCriticNet* initial) {
  config.validate();
  spec.validate();
  const Rng root(seed, stream_id("ppo.train"));
  Rng init_rng = root.substream("init");

  TrainResult result{initial ? *initial : nn::ActorCriticNet::initialized(topology, init_rng), {}, 0};
  if (result.policy.obs_dim() != spec.obs_dim() ||
      result.policy.action_count() != spec.action_count())
    fail(ErrorKind::kConfig, "policy shape " + result.policy.topology().describe() +
                                 " does not match environment " + spec.describe());

  const std::int64_t updates = config.update_count();
  if (updates == 0) return result;

  ActorPool pool(spec, config.num_actors, root.substream("actors"));
  Rng shuffle_rng = root.substream("shuffle");
  nn::AdamState adam = nn::AdamState::for_net(result.policy);

  for (std::int64_t u = 0; u < updates; ++u) {
    const RolloutBuffer buffer = collect_rollout(result.policy, pool, config.horizon);
    result.env_steps += buffer.size();
    const GaeResult gae = compute_gae(buffer, config.gamma, config.lambda);
    if (u < config.critic_warmup_updates)
      fit_value_head(result.policy, buffer.observations, gae.returns);
    else
      ppo_update(result.policy, adam, buffer, gae, config, shuffle_rng);

    CurvePoint point;
    point.env_steps = result.env_steps;
    const auto& recent = pool.recent_returns();
    point.episodes = static_cast<std::int64_t>(recent.size());
    if (!recent.empty()) {
      const double mean = std::accumulate(recent.begin(), recent.end(), 0.0) / recent.size();
      double var = 0.0;
      for (double r : recent) var += (r - mean) * (r - mean);
      point.mean_return = mean;
      point.std_return = std::sqrt(var / recent.size());
    }
    result.curve.push_back(point);
  }
  return result;
}

TrainResult train(const envs::EnvSpec& spec, nn::CapacityTier tier, const PpoConfig& config,
                  std::uint64_t seed, const nn::TierWidths& widths) {
  return train(spec, topology_for(spec, tier, widths), config, seed);
}

}  // namespace distillery::ppo
