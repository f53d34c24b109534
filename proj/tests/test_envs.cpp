#include "distillery/envs.hpp"

#include <cmath>
#include <numbers>

#include "distillery/errors.hpp"
#include "distillery/eval.hpp"
#include "doctest.h"

using namespace distillery;
using envs::EnvSpec;
using envs::Vector;

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

bool is_one_hot(const Vector& v) {
  int ones = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] == 1.0) ++ones;
    else if (v[i] != 0.0) return false;
  }
  return ones == 1;
}

struct Cart {
  double x, x_dot, theta, theta_dot;
};

// Scalar restatement of the classic cart-pole Euler step.
Cart euler_step(Cart s, int action) {
  const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5, f_mag = 10.0, tau = 0.02;
  const double f = action == 1 ? f_mag : -f_mag;
  const double mt = mc + mp;
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  const double tmp = (f + mp * l * s.theta_dot * s.theta_dot * st) / mt;
  const double th_acc = (g * st - ct * tmp) / (l * (4.0 / 3.0 - mp * ct * ct / mt));
  const double x_acc = tmp - mp * l * th_acc * ct / mt;
  return {s.x + tau * s.x_dot, s.x_dot + tau * x_acc, s.theta + tau * s.theta_dot,
          s.theta_dot + tau * th_acc};
}

// Undiscounted return of the always-right policy on a chain, solved as a
// linear system rather than by iteration.
double chain_right_value(int n, double slip, double gamma) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n - 1; ++s) {
    const int right = s + 1;
    const int left = std::max(s - 1, 0);
    b[s] = -0.01 + (1.0 - slip) * (right == n - 1 ? 1.0 : 0.0) + slip * (left == n - 1 ? 1.0 : 0.0);
    if (right != n - 1) a(s, right) -= gamma * (1.0 - slip);
    if (left != n - 1) a(s, left) -= gamma * slip;
  }
  return a.partialPivLu().solve(b)[0];
}

}  // namespace

TEST_CASE("reset observations") {
  auto chain = envs::make_environment(EnvSpec::chain(10, 0.1), 1, 0);
  const Vector c = chain->reset();
  CHECK(c.size() == 10);
  CHECK(c[0] == 1.0);
  CHECK(is_one_hot(c));

  auto grid = envs::make_environment(EnvSpec::grid(5), 1, 0);
  const Vector g = grid->reset();
  CHECK(g.size() == 25);
  CHECK(g[0] == 1.0);
  CHECK(is_one_hot(g));

  auto cp1 = envs::make_environment(EnvSpec::cartpole_lite(), 77, 3);
  auto cp2 = envs::make_environment(EnvSpec::cartpole_lite(), 77, 3);
  const Vector s1 = cp1->reset();
  CHECK(s1 == cp2->reset());
  CHECK(s1.size() == 4);
  CHECK(s1.cwiseAbs().maxCoeff() <= 0.05);
  auto cp3 = envs::make_environment(EnvSpec::cartpole_lite(), 78, 3);
  CHECK(cp3->reset() != s1);
}

TEST_CASE("chain hand simulation") {
  auto env = envs::make_environment(EnvSpec::chain(3, 0.0), 0, 0);
  env->reset();
  const auto a = env->step(1);
  CHECK(a.reward == doctest::Approx(-0.01));
  CHECK_FALSE(a.done);
  const auto b = env->step(1);
  CHECK(b.reward == doctest::Approx(0.99));
  CHECK(b.done);
  CHECK_FALSE(b.truncated);
  CHECK(kind_of([&] { env->step(1); }) == ErrorKind::kUsage);
}

TEST_CASE("chain left is clamped at zero") {
  auto env = envs::make_environment(EnvSpec::chain(5, 0.0), 0, 0);
  env->reset();
  const auto r = env->step(0);
  CHECK(r.observation[0] == 1.0);
  CHECK(r.reward == doctest::Approx(-0.01));
}

TEST_CASE("chain slip frequency") {
  auto env = envs::make_environment(EnvSpec::chain(50, 0.3), 4, 0);
  int slips = 0;
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) {
    env->reset();
    const auto r = env->step(1);
    slips += r.observation[0] == 1.0;
  }
  CHECK(static_cast<double>(slips) / trials == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("grid hand simulation") {
  auto env = envs::make_environment(EnvSpec::grid(2), 0, 0);
  env->reset();
  double total = 0.0;
  const auto a = env->step(envs::GridWorld::kRight);
  total += a.reward;
  CHECK_FALSE(a.done);
  CHECK(a.observation[1] == 1.0);
  const auto b = env->step(envs::GridWorld::kUp);
  total += b.reward;
  CHECK(b.done);
  CHECK(b.observation[3] == 1.0);
  CHECK(total == doctest::Approx(0.98));
}

TEST_CASE("grid moves off the edge are no-ops") {
  auto env = envs::make_environment(EnvSpec::grid(3), 0, 0);
  env->reset();
  CHECK(env->step(envs::GridWorld::kDown).observation[0] == 1.0);
  CHECK(env->step(envs::GridWorld::kLeft).observation[0] == 1.0);
}

TEST_CASE("cartpole Euler step matches an independent oracle") {
  envs::CartPoleLite env(EnvSpec::cartpole_lite(), Rng(0, 0));
  env.reset();
  env.set_state({0.0, 0.0, 0.0, 0.0});
  const auto r = env.step(1);
  const Cart expect = euler_step({0, 0, 0, 0}, 1);
  CHECK(std::abs(r.observation[0] - expect.x) < 1e-12);
  CHECK(std::abs(r.observation[1] - expect.x_dot) < 1e-12);
  CHECK(std::abs(r.observation[2] - expect.theta) < 1e-12);
  CHECK(std::abs(r.observation[3] - expect.theta_dot) < 1e-12);
  CHECK(expect.theta_dot < 0.0);
  CHECK(r.reward == 1.0);

  Rng rng(3, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const Cart s{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.15, 0.15),
                 rng.uniform(-1, 1)};
    const int action = static_cast<int>(rng.below(2));
    envs::CartPoleLite e(EnvSpec::cartpole_lite(), Rng(0, 0));
    e.reset();
    e.set_state({s.x, s.x_dot, s.theta, s.theta_dot});
    const auto out = e.step(action);
    const Cart want = euler_step(s, action);
    REQUIRE(std::abs(out.observation[0] - want.x) < 1e-12);
    REQUIRE(std::abs(out.observation[1] - want.x_dot) < 1e-12);
    REQUIRE(std::abs(out.observation[2] - want.theta) < 1e-12);
    REQUIRE(std::abs(out.observation[3] - want.theta_dot) < 1e-12);
  }
}

TEST_CASE("cartpole terminates past the angle limit") {
  envs::CartPoleLite env(EnvSpec::cartpole_lite(), Rng(0, 0));
  env.reset();
  env.set_state({0.0, 0.0, 11.9 * std::numbers::pi / 180.0, 2.0});
  CHECK(env.step(1).done);
}

TEST_CASE("episode length never exceeds the cap and done is reported once") {
  for (const auto& spec : {EnvSpec::chain(10, 0.1), EnvSpec::grid(4), EnvSpec::cartpole_lite()}) {
    auto env = envs::make_environment(spec, 9, 0);
    Rng actions(9, 1);
    for (int episode = 0; episode < 30; ++episode) {
      env->reset();
      int steps = 0;
      bool done = false;
      while (!done) {
        // Always left on the chain never reaches the goal, so the cap must end it.
        const int a = spec.id == envs::EnvId::kChain ? 0 : static_cast<int>(actions.below(spec.action_count()));
        const auto r = env->step(a);
        ++steps;
        REQUIRE(r.observation.allFinite());
        if (spec.is_tabular()) REQUIRE(is_one_hot(r.observation));
        done = r.done;
        if (r.truncated) REQUIRE(steps == spec.effective_step_cap());
      }
      REQUIRE(steps <= spec.effective_step_cap());
      REQUIRE(env->done());
      CHECK(kind_of([&] { env->step(0); }) == ErrorKind::kUsage);
    }
  }
  CHECK(EnvSpec::chain(10, 0.1).effective_step_cap() == 40);
  CHECK(EnvSpec::grid(5).effective_step_cap() == 100);
  CHECK(EnvSpec::cartpole_lite().effective_step_cap() == 500);
}

TEST_CASE("step errors") {
  auto env = envs::make_environment(EnvSpec::chain(4, 0.0), 0, 0);
  CHECK(kind_of([&] { env->step(0); }) == ErrorKind::kUsage);
  env->reset();
  CHECK(kind_of([&] { env->step(2); }) == ErrorKind::kDomain);
  CHECK(kind_of([&] { env->step(-1); }) == ErrorKind::kDomain);
}

TEST_CASE("spec validation") {
  CHECK(kind_of([] { EnvSpec::chain(2, 0.1).validate(); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { EnvSpec::chain(5, 1.0).validate(); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { EnvSpec::grid(1).validate(); }) == ErrorKind::kConfig);
  EnvSpec capped = EnvSpec::grid(3);
  capped.step_cap = -1;
  CHECK(kind_of([&] { capped.validate(); }) == ErrorKind::kConfig);
  CHECK(EnvSpec::grid(5).obs_dim() == 25);
  CHECK(EnvSpec::grid(5).action_count() == 4);
  CHECK(EnvSpec::cartpole_lite().obs_dim() == 4);
  CHECK(EnvSpec::chain(7, 0).action_count() == 2);
}

TEST_CASE("deterministic tabular trajectories with slip zero") {
  for (const auto& spec : {EnvSpec::chain(6, 0.0), EnvSpec::grid(3)}) {
    auto a = envs::make_environment(spec, 1, 0);
    auto b = envs::make_environment(spec, 2, 5);
    a->reset();
    b->reset();
    Rng pick(4, 4);
    for (int t = 0; t < 8 && !a->done(); ++t) {
      const int action = static_cast<int>(pick.below(spec.action_count()));
      const auto ra = a->step(action);
      const auto rb = b->step(action);
      REQUIRE(ra.observation == rb.observation);
      REQUIRE(ra.reward == rb.reward);
      REQUIRE(ra.done == rb.done);
    }
  }
}

TEST_CASE("optimal_return examples") {
  CHECK(envs::optimal_return(EnvSpec::chain(3, 0.0), 1.0) == doctest::Approx(0.98).epsilon(1e-12));
  CHECK(envs::optimal_return(EnvSpec::grid(2), 1.0) == doctest::Approx(0.98).epsilon(1e-12));
  CHECK(kind_of([] { envs::optimal_return(EnvSpec::cartpole_lite(), 0.99); }) ==
        ErrorKind::kUnsupported);
  CHECK(kind_of([] { envs::optimal_return(EnvSpec::chain(3, 0.0), 0.0); }) == ErrorKind::kDomain);
}

TEST_CASE("chain optimal value matches the always-right linear solve") {
  for (double gamma : {0.99, 1.0}) {
    const double vi = envs::optimal_return(EnvSpec::chain(10, 0.1), gamma);
    CHECK(std::abs(vi - chain_right_value(10, 0.1, gamma)) < 1e-9);
  }
  // Pinned from the first computation.
  CHECK(envs::optimal_return(EnvSpec::chain(10, 0.1), 0.99) ==
        doctest::Approx(0.798526414878).epsilon(1e-10));
}

TEST_CASE("value iteration residual and greedy actions") {
  const auto model = envs::build_tabular_model(EnvSpec::grid(4));
  const auto sol = envs::value_iteration(model, 0.95);
  CHECK(sol.residual < 1e-10);
  // From the start every optimal first move goes up or right; ties pick the lowest index (up).
  CHECK(sol.greedy_action[0] == envs::GridWorld::kUp);
  CHECK(sol.values[15] == 0.0);
}

TEST_CASE("greedy policy achieves the optimal return") {
  SUBCASE("deterministic environments are exact") {
    for (const auto& spec : {EnvSpec::chain(8, 0.0), EnvSpec::grid(4)}) {
      const auto sol = envs::value_iteration(envs::build_tabular_model(spec), 1.0);
      auto env = envs::make_environment(spec, 3, 0);
      Vector obs = env->reset();
      double total = 0.0;
      bool done = false;
      while (!done) {
        const auto r = env->step(sol.greedy_action[envs::state_from_observation(obs)]);
        total += r.reward;
        obs = r.observation;
        done = r.done;
      }
      CHECK(std::abs(total - envs::optimal_return(spec, 1.0)) < 1e-9);
    }
  }
  SUBCASE("slippery chain within three standard errors") {
    const auto spec = EnvSpec::chain(10, 0.1);
    const auto sol = envs::value_iteration(envs::build_tabular_model(spec), 1.0);
    auto env = envs::make_environment(spec, 5, 0);
    std::vector<double> scores;
    for (int episode = 0; episode < 10000; ++episode) {
      Vector obs = env->reset();
      double total = 0.0;
      bool done = false;
      while (!done) {
        const auto r = env->step(sol.greedy_action[envs::state_from_observation(obs)]);
        total += r.reward;
        obs = r.observation;
        done = r.done;
      }
      scores.push_back(total);
    }
    const auto report = eval::EvalReport::from_scores(scores, 0);
    CHECK(std::abs(report.mean - envs::optimal_return(spec, 1.0)) <= 3.0 * report.standard_error());
  }
}

TEST_CASE("global step counter counts every step") {
  const auto before = envs::global_step_count();
  auto env = envs::make_environment(EnvSpec::chain(5, 0.0), 0, 0);
  env->reset();
  env->step(1);
  env->step(1);
  CHECK(envs::global_step_count() - before == 2);
}
