#include "distillery/envs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>

#include "distillery/errors.hpp"

namespace distillery::envs {
namespace {

constexpr double kStepPenalty = -0.01;
constexpr double kGoalReward = 1.0;

std::atomic<std::uint64_t> g_step_count{0};

Vector one_hot(int size, int index) {
  Vector v = Vector::Zero(size);
  v[index] = 1.0;
  return v;
}

}  // namespace

const char* to_string(EnvId id) {
  switch (id) {
    case EnvId::kChain: return "chain";
    case EnvId::kGrid: return "grid";
    case EnvId::kCartPoleLite: return "cartpole_lite";
  }
  return "?";
}

EnvId parse_env_id(std::string_view name) {
  if (name == "chain") return EnvId::kChain;
  if (name == "grid") return EnvId::kGrid;
  if (name == "cartpole_lite") return EnvId::kCartPoleLite;
  fail(ErrorKind::kConfig, "unknown environment id '" + std::string(name) + "'");
}

EnvSpec EnvSpec::chain(int length, double slip) {
  EnvSpec spec;
  spec.id = EnvId::kChain;
  spec.chain_length = length;
  spec.slip = slip;
  return spec;
}

EnvSpec EnvSpec::grid(int side) {
  EnvSpec spec;
  spec.id = EnvId::kGrid;
  spec.grid_side = side;
  return spec;
}

EnvSpec EnvSpec::cartpole_lite() {
  EnvSpec spec;
  spec.id = EnvId::kCartPoleLite;
  return spec;
}

int EnvSpec::obs_dim() const {
  switch (id) {
    case EnvId::kChain: return chain_length;
    case EnvId::kGrid: return grid_side * grid_side;
    case EnvId::kCartPoleLite: return 4;
  }
  return 0;
}

int EnvSpec::action_count() const {
  switch (id) {
    case EnvId::kChain: return 2;
    case EnvId::kGrid: return 4;
    case EnvId::kCartPoleLite: return 2;
  }
  return 0;
}

int EnvSpec::effective_step_cap() const {
  if (step_cap > 0) return step_cap;
  switch (id) {
    case EnvId::kChain: return 4 * chain_length;
    case EnvId::kGrid: return 4 * grid_side * grid_side;
    case EnvId::kCartPoleLite: return 500;
  }
  return 1;
}

void EnvSpec::validate() const {
  if (step_cap < 0) fail(ErrorKind::kConfig, "step cap must be positive");
  switch (id) {
    case EnvId::kChain:
      if (chain_length < 3) fail(ErrorKind::kConfig, "chain length must be at least 3");
      if (!(slip >= 0.0 && slip < 1.0)) fail(ErrorKind::kConfig, "slip must lie in [0, 1)");
      break;
    case EnvId::kGrid:
      if (grid_side < 2) fail(ErrorKind::kConfig, "grid side must be at least 2");
      break;
    case EnvId::kCartPoleLite: {
      const auto& c = cartpole;
      if (!(c.cart_mass > 0 && c.pole_mass > 0 && c.half_length > 0 && c.dt > 0 &&
            c.x_limit > 0 && c.theta_limit_deg > 0))
        fail(ErrorKind::kConfig, "cart-pole constants must be positive");
      break;
    }
  }
}

std::string EnvSpec::describe() const {
  std::ostringstream out;
  out << to_string(id);
  switch (id) {
    case EnvId::kChain: out << "(N=" << chain_length << " slip=" << slip << ")"; break;
    case EnvId::kGrid: out << "(L=" << grid_side << ")"; break;
    case EnvId::kCartPoleLite: break;
  }
  return out.str();
}

std::uint64_t global_step_count() { return g_step_count.load(); }

Environment::Environment(EnvSpec spec, Rng rng) : spec_(std::move(spec)), rng_(rng) {
  spec_.validate();
}

Vector Environment::reset() {
  done_ = false;
  started_ = true;
  episode_steps_ = 0;
  return do_reset();
}

StepResult Environment::step(int action) {
  if (!started_) fail(ErrorKind::kUsage, "step called before reset");
  if (done_) fail(ErrorKind::kUsage, "step called after the episode ended; reset first");
  if (action < 0 || action >= action_count())
    fail(ErrorKind::kDomain, "action " + std::to_string(action) + " outside [0, " +
                                 std::to_string(action_count()) + ")");
  StepResult result = do_step(action);
  ++episode_steps_;
  g_step_count.fetch_add(1, std::memory_order_relaxed);
  if (!result.done && episode_steps_ >= spec_.effective_step_cap()) {
    result.done = true;
    result.truncated = true;
  }
  done_ = result.done;
  return result;
}

std::unique_ptr<Environment> make_environment(const EnvSpec& spec, std::uint64_t seed,
                                              std::uint64_t index) {
  return make_environment(spec, Rng(seed, index));
}

std::unique_ptr<Environment> make_environment(const EnvSpec& spec, Rng rng) {
  switch (spec.id) {
    case EnvId::kChain: return std::make_unique<ChainMdp>(spec, rng);
    case EnvId::kGrid: return std::make_unique<GridWorld>(spec, rng);
    case EnvId::kCartPoleLite: return std::make_unique<CartPoleLite>(spec, rng);
  }
  fail(ErrorKind::kUnsupported, "unknown environment");
}

// --- ChainMdp ---

ChainMdp::ChainMdp(const EnvSpec& spec, Rng rng) : Environment(spec, rng) {}

Vector ChainMdp::observe() const { return one_hot(spec().chain_length, state_); }

Vector ChainMdp::do_reset() {
  state_ = 0;
  return observe();
}

StepResult ChainMdp::do_step(int action) {
  int effective = action;
  if (spec().slip > 0.0 && rng().uniform() < spec().slip) effective = 1 - action;
  state_ = effective == 1 ? state_ + 1 : std::max(state_ - 1, 0);
  const bool goal = state_ == spec().chain_length - 1;
  return {observe(), kStepPenalty + (goal ? kGoalReward : 0.0), goal};
}

// --- GridWorld ---

GridWorld::GridWorld(const EnvSpec& spec, Rng rng) : Environment(spec, rng) {}

Vector GridWorld::observe() const {
  const int side = spec().grid_side;
  return one_hot(side * side, x_ + side * y_);
}

Vector GridWorld::do_reset() {
  x_ = 0;
  y_ = 0;
  return observe();
}

StepResult GridWorld::do_step(int action) {
  const int last = spec().grid_side - 1;
  switch (action) {
    case kUp: y_ = std::min(y_ + 1, last); break;
    case kDown: y_ = std::max(y_ - 1, 0); break;
    case kLeft: x_ = std::max(x_ - 1, 0); break;
    case kRight: x_ = std::min(x_ + 1, last); break;
  }
  const bool goal = x_ == last && y_ == last;
  return {observe(), kStepPenalty + (goal ? kGoalReward : 0.0), goal};
}

// --- CartPoleLite ---

CartPoleLite::CartPoleLite(const EnvSpec& spec, Rng rng) : Environment(spec, rng) {}

Vector CartPoleLite::observe() const {
  Vector v(4);
  v << state_.x, state_.x_dot, state_.theta, state_.theta_dot;
  return v;
}

Vector CartPoleLite::do_reset() {
  state_.x = rng().uniform(-0.05, 0.05);
  state_.x_dot = rng().uniform(-0.05, 0.05);
  state_.theta = rng().uniform(-0.05, 0.05);
  state_.theta_dot = rng().uniform(-0.05, 0.05);
  return observe();
}

StepResult CartPoleLite::do_step(int action) {
  const CartPoleParams& p = spec().cartpole;
  const double force = action == 1 ? p.force : -p.force;
  const double cos_theta = std::cos(state_.theta);
  const double sin_theta = std::sin(state_.theta);
  const double total_mass = p.cart_mass + p.pole_mass;
  const double pole_mass_length = p.pole_mass * p.half_length;

  const double temp =
      (force + pole_mass_length * state_.theta_dot * state_.theta_dot * sin_theta) / total_mass;
  const double theta_acc =
      (p.gravity * sin_theta - cos_theta * temp) /
      (p.half_length * (4.0 / 3.0 - p.pole_mass * cos_theta * cos_theta / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_theta / total_mass;

  state_.x += p.dt * state_.x_dot;
  state_.x_dot += p.dt * x_acc;
  state_.theta += p.dt * state_.theta_dot;
  state_.theta_dot += p.dt * theta_acc;

  const double theta_limit = p.theta_limit_deg * std::numbers::pi / 180.0;
  const bool fallen = std::abs(state_.x) > p.x_limit || std::abs(state_.theta) > theta_limit;
  return {observe(), 1.0, fallen};
}

// --- Tabular oracle ---

TabularModel build_tabular_model(const EnvSpec& spec) {
  spec.validate();
  TabularModel model;
  model.num_actions = spec.action_count();
  model.start_state = 0;

  if (spec.id == EnvId::kChain) {
    const int n = spec.chain_length;
    model.num_states = n;
    model.terminal.assign(n, false);
    model.terminal[n - 1] = true;
    model.outcomes.assign(n, std::vector<std::vector<TabularModel::Outcome>>(2));
    auto move = [n](int s, int a) { return a == 1 ? std::min(s + 1, n - 1) : std::max(s - 1, 0); };
    for (int s = 0; s < n - 1; ++s) {
      for (int a = 0; a < 2; ++a) {
        auto& out = model.outcomes[s][a];
        for (auto [prob, effective] : {std::pair{1.0 - spec.slip, a}, std::pair{spec.slip, 1 - a}}) {
          if (prob <= 0.0) continue;
          const int next = move(s, effective);
          out.push_back({prob, next, kStepPenalty + (next == n - 1 ? kGoalReward : 0.0)});
        }
      }
    }
    return model;
  }

  if (spec.id == EnvId::kGrid) {
    const int side = spec.grid_side;
    const int goal = side * side - 1;
    model.num_states = side * side;
    model.terminal.assign(model.num_states, false);
    model.terminal[goal] = true;
    model.outcomes.assign(model.num_states, std::vector<std::vector<TabularModel::Outcome>>(4));
    for (int s = 0; s < model.num_states; ++s) {
      if (s == goal) continue;
      const int x = s % side;
      const int y = s / side;
      for (int a = 0; a < 4; ++a) {
        int nx = x;
        int ny = y;
        if (a == GridWorld::kUp) ny = std::min(y + 1, side - 1);
        if (a == GridWorld::kDown) ny = std::max(y - 1, 0);
        if (a == GridWorld::kLeft) nx = std::max(x - 1, 0);
        if (a == GridWorld::kRight) nx = std::min(x + 1, side - 1);
        const int next = nx + side * ny;
        model.outcomes[s][a].push_back(
            {1.0, next, kStepPenalty + (next == goal ? kGoalReward : 0.0)});
      }
    }
    return model;
  }

  fail(ErrorKind::kUnsupported, "no tabular model for " + spec.describe());
}

TabularSolution value_iteration(const TabularModel& model, double gamma, double tolerance,
                                int max_iterations) {
  if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorKind::kDomain, "gamma must lie in (0, 1]");
  TabularSolution sol;
  sol.values.assign(model.num_states, 0.0);
  sol.q.assign(model.num_states, std::vector<double>(model.num_actions, 0.0));
  sol.greedy_action.assign(model.num_states, 0);

  auto backup = [&](int s, int a) {
    double q = 0.0;
    for (const auto& o : model.outcomes[s][a])
      q += o.probability * (o.reward + gamma * sol.values[o.next_state]);
    return q;
  };

  for (sol.iterations = 1; sol.iterations <= max_iterations; ++sol.iterations) {
    double residual = 0.0;
    for (int s = 0; s < model.num_states; ++s) {
      if (model.terminal[s]) continue;
      double best = backup(s, 0);
      for (int a = 1; a < model.num_actions; ++a) best = std::max(best, backup(s, a));
      residual = std::max(residual, std::abs(best - sol.values[s]));
      sol.values[s] = best;
    }
    sol.residual = residual;
    if (residual < tolerance) break;
  }
  if (sol.residual >= tolerance) fail(ErrorKind::kNumeric, "value iteration did not converge");

  for (int s = 0; s < model.num_states; ++s) {
    if (model.terminal[s]) continue;
    for (int a = 0; a < model.num_actions; ++a) sol.q[s][a] = backup(s, a);
    sol.greedy_action[s] = static_cast<int>(
        std::max_element(sol.q[s].begin(), sol.q[s].end()) - sol.q[s].begin());
  }
  return sol;
}

double optimal_return(const EnvSpec& spec, double gamma) {
  if (!spec.is_tabular())
    fail(ErrorKind::kUnsupported, "optimal_return is only defined for tabular environments");
  const TabularModel model = build_tabular_model(spec);
  return value_iteration(model, gamma).values[model.start_state];
}

int state_from_observation(const Vector& observation) {
  Eigen::Index index = 0;
  observation.maxCoeff(&index);
  return static_cast<int>(index);
}

}  // namespace distillery::envs
