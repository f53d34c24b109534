#include "distillery/ppo.hpp"

#include <cmath>

#include "distillery/errors.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace distillery;
using nn::ActorCriticNet;
using nn::Matrix;
using nn::Vector;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kUsage;
}

ppo::RolloutBuffer random_buffer(Rng& rng, int actors, int horizon, double done_prob) {
  auto b = ppo::RolloutBuffer::empty(actors, horizon, 1);
  for (Eigen::Index k = 0; k < b.size(); ++k) {
    b.rewards[k] = rng.uniform(-1.0, 1.0);
    b.values[k] = rng.uniform(-2.0, 2.0);
    b.dones[static_cast<std::size_t>(k)] = rng.uniform() < done_prob;
  }
  for (int i = 0; i < actors; ++i) b.bootstrap_values[i] = rng.uniform(-2.0, 2.0);
  return b;
}

// Direct double sum of (gamma lambda)^l delta_{t+l}, stopping at the first done.
ppo::GaeResult brute_force_gae(const ppo::RolloutBuffer& b, double gamma, double lambda) {
  ppo::GaeResult out{Vector::Zero(b.size()), Vector::Zero(b.size())};
  for (int actor = 0; actor < b.num_actors; ++actor) {
    auto delta = [&](int t) {
      const auto k = b.index(actor, t);
      const double next = t + 1 < b.horizon ? b.values[b.index(actor, t + 1)] : b.bootstrap_values[actor];
      const double not_done = b.dones[static_cast<std::size_t>(k)] ? 0.0 : 1.0;
      const double cut = b.truncation_values.size() ? b.truncation_values[k] : 0.0;
      return b.rewards[k] + gamma * (next * not_done + cut) - b.values[k];
    };
    for (int t = 0; t < b.horizon; ++t) {
      double sum = 0.0;
      double weight = 1.0;
      for (int l = 0; t + l < b.horizon; ++l) {
        sum += weight * delta(t + l);
        if (b.dones[static_cast<std::size_t>(b.index(actor, t + l))]) break;
        weight *= gamma * lambda;
      }
      const auto k = b.index(actor, t);
      out.advantages[k] = sum;
      out.returns[k] = sum + b.values[k];
    }
  }
  return out;
}

struct PpoInstance {
  ActorCriticNet net;
  Matrix obs;
  std::vector<int> actions;
  Vector old_log_probs, advantages, returns;
};

PpoInstance random_instance(Rng& rng, const ppo::PpoConfig& config) {
  const int obs_dim = 2 + static_cast<int>(rng.below(3));
  const int action_count = 2 + static_cast<int>(rng.below(3));
  const int width = 3 + static_cast<int>(rng.below(6));
  auto net = ActorCriticNet::initialized(nn::make_topology(obs_dim, action_count, {width, width}), rng);
  net.mutable_policy_head().weight = testing::random_matrix(action_count, width, rng);
  const Eigen::Index m = 3 + static_cast<Eigen::Index>(rng.below(5));
  PpoInstance inst{net, testing::random_matrix(m, obs_dim, rng), {}, Vector(m), Vector(m), Vector(m)};
  const auto fwd = nn::forward(inst.net, inst.obs);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int a = static_cast<int>(rng.below(action_count));
    inst.actions.push_back(a);
    const double log_p = nn::log_softmax(fwd.logits.row(i).transpose())[a];
    // Keep ratios away from the clip kinks so the loss is smooth around the sample.
    double shift;
    do {
      shift = rng.uniform(-0.4, 0.4);
    } while (std::abs(std::abs(std::exp(shift) - 1.0) - config.clip) < 0.02);
    inst.old_log_probs[i] = log_p - shift;
    inst.advantages[i] = rng.uniform(-2.0, 2.0);
    inst.returns[i] = rng.uniform(-1.0, 1.0);
  }
  return inst;
}

}  // namespace

TEST_CASE("uniform policy picks each chain action half the time") {
  const auto spec = envs::EnvSpec::chain(10, 0.1);
  const ActorCriticNet uniform(nn::make_topology(10, 2, {8}));
  ppo::ActorPool pool(spec, 10, Rng(3, 0));
  const auto buffer = ppo::collect_rollout(uniform, pool, 1000);
  double right = 0.0;
  for (int a : buffer.actions) right += a;
  CHECK(std::abs(right / buffer.size() - 0.5) <= 0.02);
  for (Eigen::Index k = 0; k < buffer.size(); ++k) REQUIRE(buffer.log_probs[k] == doctest::Approx(std::log(0.5)));
}

TEST_CASE("rollouts are reproducible and shaped") {
  const auto spec = envs::EnvSpec::grid(3);
  Rng init(5, 0);
  const auto net = ActorCriticNet::initialized(nn::make_topology(9, 4, {8}), init);
  ppo::ActorPool p1(spec, 3, Rng(9, 9)), p2(spec, 3, Rng(9, 9));
  const auto a = ppo::collect_rollout(net, p1, 50);
  const auto b = ppo::collect_rollout(net, p2, 50);
  CHECK(a.observations == b.observations);
  CHECK(a.actions == b.actions);
  CHECK(a.rewards == b.rewards);
  CHECK(a.dones == b.dones);
  CHECK(a.log_probs == b.log_probs);
  CHECK(a.values == b.values);

  ppo::ActorPool small(spec, 2, Rng(1, 1));
  const auto tiny = ppo::collect_rollout(net, small, 1);
  CHECK(tiny.size() == 2);
  CHECK(tiny.observations.rows() == 2);
  CHECK(tiny.actions.size() == 2);
  CHECK(tiny.bootstrap_values.size() == 2);
}

TEST_CASE("recorded log-probabilities are log softmax at the sampled action") {
  const auto spec = envs::EnvSpec::cartpole_lite();
  Rng init(7, 0);
  auto net = ActorCriticNet::initialized(nn::make_topology(4, 2, {8}), init);
  net.mutable_policy_head().weight *= 100.0;
  ppo::ActorPool pool(spec, 4, Rng(2, 2));
  const auto buf = ppo::collect_rollout(net, pool, 64);
  const auto fwd = nn::forward(net, buf.observations);
  for (Eigen::Index k = 0; k < buf.size(); ++k) {
    const Vector lp = nn::log_softmax(fwd.logits.row(k).transpose());
    REQUIRE(buf.log_probs[k] <= 0.0);
    REQUIRE(std::abs(buf.log_probs[k] - lp[buf.actions[static_cast<std::size_t>(k)]]) < 1e-12);
    REQUIRE(std::abs(buf.values[k] - fwd.values[k]) < 1e-12);
  }
}

TEST_CASE("step-cap truncation stores the value of the cut-off state") {
  auto spec = envs::EnvSpec::chain(10, 0.0);
  spec.step_cap = 3;
  Rng init(4, 0);
  auto net = ActorCriticNet::initialized(nn::make_topology(10, 2, {6}), init);
  net.mutable_value_head().bias << 0.5;
  ppo::ActorPool pool(spec, 2, Rng(8, 8));
  const auto buf = ppo::collect_rollout(net, pool, 9);
  int truncations = 0;
  for (int actor = 0; actor < 2; ++actor) {
    for (int t = 0; t < 9; ++t) {
      const auto k = buf.index(actor, t);
      // Three steps from state 0 can never reach state 9.
      REQUIRE(buf.dones[static_cast<std::size_t>(k)] == ((t + 1) % 3 == 0));
      if (buf.dones[static_cast<std::size_t>(k)]) {
        ++truncations;
        REQUIRE(buf.truncation_values[k] != 0.0);
      } else {
        REQUIRE(buf.truncation_values[k] == 0.0);
      }
    }
  }
  CHECK(truncations == 6);
}

TEST_CASE("GAE single step and lambda zero") {
  Rng rng(1, 0);
  auto b = random_buffer(rng, 1, 1, 0.0);
  const double gamma = 0.97;
  auto g = ppo::compute_gae(b, gamma, 0.9);
  CHECK(g.advantages[0] == doctest::Approx(b.rewards[0] + gamma * b.bootstrap_values[0] - b.values[0]));
  b.dones[0] = 1;
  g = ppo::compute_gae(b, gamma, 0.9);
  CHECK(g.advantages[0] == doctest::Approx(b.rewards[0] - b.values[0]));

  auto c = random_buffer(rng, 2, 10, 0.2);
  const auto zero = ppo::compute_gae(c, gamma, 0.0);
  for (int actor = 0; actor < 2; ++actor)
    for (int t = 0; t < 10; ++t) {
      const auto k = c.index(actor, t);
      const double next = t + 1 < 10 ? c.values[c.index(actor, t + 1)] : c.bootstrap_values[actor];
      const double delta = c.rewards[k] + gamma * next * (c.dones[static_cast<std::size_t>(k)] ? 0.0 : 1.0) - c.values[k];
      CHECK(std::abs(zero.advantages[k] - delta) < 1e-12);
    }
}

TEST_CASE("GAE matches the brute-force oracle on random buffers") {
  Rng rng(21, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int horizon = 1 + static_cast<int>(rng.below(32));
    const int actors = 1 + static_cast<int>(rng.below(4));
    auto b = random_buffer(rng, actors, horizon, rng.uniform(0.0, 0.4));
    if (trial % 3 == 0)
      for (Eigen::Index k = 0; k < b.size(); ++k)
        if (b.dones[static_cast<std::size_t>(k)] && rng.uniform() < 0.5) b.truncation_values[k] = rng.uniform(-2, 2);
    const double gamma = trial % 4 == 1 ? 1.0 : rng.uniform(0.5, 1.0);
    const double lambda = trial % 4 == 2 ? 0.0 : rng.uniform(0.1, 1.0);
    const auto fast = ppo::compute_gae(b, gamma, lambda);
    const auto slow = brute_force_gae(b, gamma, lambda);
    REQUIRE((fast.advantages - slow.advantages).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE((fast.returns - slow.returns).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("GAE rejects inconsistent buffers") {
  Rng rng(2, 0);
  auto b = random_buffer(rng, 2, 4, 0.1);
  b.bootstrap_values = Vector::Zero(3);
  CHECK(kind_of([&] { ppo::compute_gae(b, 0.9, 0.9); }) == ErrorKind::kConfig);
}

TEST_CASE("advantage normalization is invariant to positive scaling") {
  Rng rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector a = testing::random_vector(64, rng, -5, 5);
    const double scale = rng.uniform(0.01, 100.0);
    const Vector na = ppo::normalize_advantages(a);
    const Vector nb = ppo::normalize_advantages(scale * a);
    REQUIRE((na - nb).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(std::abs(na.mean()) < 1e-12);
    REQUIRE(std::abs(std::sqrt(na.array().square().mean()) - 1.0) < 1e-12);
  }
  const Vector constant = Vector::Constant(5, 3.0);
  CHECK(ppo::normalize_advantages(constant).isZero(0.0));
}

TEST_CASE("identical policies give unit ratios and mean-advantage surrogate") {
  Rng rng(4, 0);
  ppo::PpoConfig config;
  auto inst = random_instance(rng, config);
  const auto fwd = nn::forward(inst.net, inst.obs);
  for (Eigen::Index i = 0; i < inst.obs.rows(); ++i)
    inst.old_log_probs[i] = nn::log_softmax(fwd.logits.row(i).transpose())[inst.actions[static_cast<std::size_t>(i)]];
  const auto loss = ppo::ppo_minibatch_loss(fwd, inst.actions, inst.old_log_probs, inst.advantages,
                                            inst.returns, config);
  CHECK(loss.policy_loss == doctest::Approx(-inst.advantages.mean()));
  CHECK(loss.clip_fraction == 0.0);
}

TEST_CASE("zero advantages leave only entropy and value gradients") {
  Rng rng(5, 0);
  ppo::PpoConfig config;
  config.entropy_coef = 0.0;
  auto inst = random_instance(rng, config);
  inst.advantages.setZero();
  const auto fwd = nn::forward(inst.net, inst.obs);
  const auto loss = ppo::ppo_minibatch_loss(fwd, inst.actions, inst.old_log_probs, inst.advantages,
                                            inst.returns, config);
  CHECK(loss.policy_loss == 0.0);
  CHECK(loss.dlogits.isZero(0.0));
  CHECK_FALSE(loss.dvalues.isZero(0.0));
}

TEST_CASE("PPO loss gradient matches finite differences") {
  Rng rng(6, 0);
  ppo::PpoConfig config;
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = random_instance(rng, config);
    const auto total = [&](const ActorCriticNet& n) {
      return ppo::ppo_minibatch_loss(nn::forward(n, inst.obs), inst.actions, inst.old_log_probs,
                                     inst.advantages, inst.returns, config)
          .total;
    };
    const auto fwd = nn::forward(inst.net, inst.obs);
    const auto loss = ppo::ppo_minibatch_loss(fwd, inst.actions, inst.old_log_probs,
                                              inst.advantages, inst.returns, config);
    const auto analytic = nn::backward(inst.net, fwd.cache, loss.dlogits, loss.dvalues);
    REQUIRE(testing::max_relative_error(analytic.flat, testing::numeric_gradient(inst.net, total)) < 1e-4);
  }
}

TEST_CASE("clipped surrogate is a per-sample lower bound and entropy is bounded") {
  Rng rng(7, 0);
  ppo::PpoConfig config;
  for (int trial = 0; trial < 300; ++trial) {
    auto inst = random_instance(rng, config);
    const auto fwd = nn::forward(inst.net, inst.obs);
    for (Eigen::Index i = 0; i < inst.obs.rows(); ++i) {
      const nn::ForwardResult one{fwd.logits.row(i), fwd.values.segment(i, 1), {}};
      const std::vector<int> action{inst.actions[static_cast<std::size_t>(i)]};
      const auto l = ppo::ppo_minibatch_loss(one, action, inst.old_log_probs.segment(i, 1),
                                             inst.advantages.segment(i, 1), inst.returns.segment(i, 1), config);
      const double ratio = std::exp(nn::log_softmax(fwd.logits.row(i).transpose())[action[0]] - inst.old_log_probs[i]);
      const double a = inst.advantages[i];
      const double surrogate = -l.policy_loss;
      REQUIRE(surrogate <= ratio * a + 1e-12);
      REQUIRE(surrogate <= std::clamp(ratio, 1 - config.clip, 1 + config.clip) * a + 1e-12);
      REQUIRE(l.entropy >= 0.0);
      REQUIRE(l.entropy <= std::log(static_cast<double>(fwd.logits.cols())) + 1e-12);
      REQUIRE(l.clip_fraction == (std::abs(ratio - 1.0) > config.clip ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("ppo_update validates inputs and reports numeric faults") {
  const auto spec = envs::EnvSpec::chain(5, 0.0);
  Rng init(8, 0);
  auto net = ActorCriticNet::initialized(nn::make_topology(5, 2, {4}), init);
  ppo::PpoConfig config;
  config.num_actors = 2;
  config.horizon = 16;
  config.minibatch_size = 8;
  ppo::ActorPool pool(spec, 2, Rng(1, 0));
  const auto buf = ppo::collect_rollout(net, pool, 16);
  auto gae = ppo::compute_gae(buf, config.gamma, config.lambda);
  auto adam = nn::AdamState::for_net(net);
  Rng shuffle(1, 1);
  const auto stats = ppo::ppo_update(net, adam, buf, gae, config, shuffle);
  CHECK(stats.minibatches == config.update_epochs * 4);
  CHECK(adam.step == static_cast<std::uint64_t>(stats.minibatches));

  auto bad = gae;
  bad.returns[3] = std::nan("");
  CHECK(kind_of([&] { ppo::ppo_update(net, adam, buf, bad, config, shuffle); }) == ErrorKind::kNumeric);

  config.minibatch_size = 5;
  CHECK(kind_of([&] { ppo::ppo_update(net, adam, buf, gae, config, shuffle); }) == ErrorKind::kConfig);
}

TEST_CASE("config validation") {
  ppo::PpoConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 0.0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfig);
  c = {};
  c.lambda = 1.5;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfig);
  c = {};
  c.clip = 0.0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfig);
  c = {};
  c.minibatch_size = 30;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfig);
  c = {};
  CHECK(c.gamma == 0.99);
  CHECK(c.lambda == 0.95);
  CHECK(c.clip == 0.1);
  CHECK(c.num_actors == 16);
  CHECK(c.horizon == 128);
  CHECK(c.stepsize == 3e-4);
}

TEST_CASE("training is deterministic given the seed") {
  ppo::PpoConfig config;
  config.num_actors = 4;
  config.horizon = 32;
  config.total_env_steps = 4 * 32 * 5;
  const auto spec = envs::EnvSpec::chain(6, 0.1);
  const auto a = ppo::train(spec, nn::CapacityTier::kLow, config, 11);
  const auto b = ppo::train(spec, nn::CapacityTier::kLow, config, 11);
  const auto c = ppo::train(spec, nn::CapacityTier::kLow, config, 12);
  REQUIRE(a.curve.size() == 5);
  CHECK(a.env_steps == 640);
  CHECK(a.policy.flat_parameters() == b.policy.flat_parameters());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].mean_return == b.curve[i].mean_return);
    CHECK(a.curve[i].env_steps == static_cast<std::int64_t>((i + 1) * 128));
  }
  CHECK(a.policy.flat_parameters() != c.policy.flat_parameters());
}

TEST_CASE("gridworld teacher learns to reach the goal") {
  ppo::PpoConfig config;
  config.total_env_steps = config.steps_per_update() * 100;
  const auto result = ppo::train(envs::EnvSpec::grid(5), nn::CapacityTier::kHigh, config, 1);
  REQUIRE(result.curve.size() == 100);
  CHECK(result.curve.back().mean_return > 0.0);
}

TEST_CASE("value-head regression matches an independent least-squares solve") {
  Rng rng(9, 0);
  auto net = ActorCriticNet::initialized(nn::make_topology(3, 2, {5}), rng);
  const Matrix obs = testing::random_matrix(40, 3, rng);
  const Vector targets = testing::random_vector(40, rng, -3, 3);
  const Vector body_before = net.flat_parameters().head(3 * 5 + 5 + 5 * 2 + 2);
  const double ridge = 1e-3;
  ppo::fit_value_head(net, obs, targets, ridge);
  CHECK(net.flat_parameters().head(body_before.size()) == body_before);

  // Augmented system [X; sqrt(ridge) I] w = [y; 0] solved by QR.
  Matrix h = nn::forward(net, obs).cache.layer_inputs.back();
  Matrix x(40 + 6, 6);
  x.setZero();
  x.topLeftCorner(40, 5) = h;
  x.block(0, 5, 40, 1).setOnes();
  x.bottomRows(6) = std::sqrt(ridge) * Matrix::Identity(6, 6);
  Vector y = Vector::Zero(46);
  y.head(40) = targets;
  const Vector w = x.colPivHouseholderQr().solve(y);
  CHECK((net.value_head().weight.row(0).transpose() - w.head(5)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs(net.value_head().bias[0] - w[5]) < 1e-9);
}
