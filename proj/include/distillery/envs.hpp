#ifndef DISTILLERY_ENVS_HPP_
#define DISTILLERY_ENVS_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "distillery/rng.hpp"

namespace distillery::envs {

using Vector = Eigen::VectorXd;

enum class EnvId { kChain, kGrid, kCartPoleLite };

const char* to_string(EnvId id);
EnvId parse_env_id(std::string_view name);

// Classic cart-pole constants.
struct CartPoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force = 10.0;
  double dt = 0.02;
  double x_limit = 2.4;
  double theta_limit_deg = 12.0;

  bool operator==(const CartPoleParams&) const = default;
};

struct EnvSpec {
  EnvId id = EnvId::kChain;
  int chain_length = 10;  // chain: states 0..N-1
  double slip = 0.1;      // chain: probability the action is inverted
  int grid_side = 5;      // grid: L x L cells
  CartPoleParams cartpole;
  int step_cap = 0;       // 0 selects the environment's default cap

  static EnvSpec chain(int length, double slip);
  static EnvSpec grid(int side);
  static EnvSpec cartpole_lite();

  int obs_dim() const;
  int action_count() const;
  int effective_step_cap() const;
  bool is_tabular() const { return id != EnvId::kCartPoleLite; }
  void validate() const;
  std::string describe() const;

  bool operator==(const EnvSpec&) const = default;
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;  // done only because the step cap was reached
};

// Process-wide count of environment steps, across all instances. Lets tests
// prove that a phase never touches an environment.
std::uint64_t global_step_count();

class Environment {
 public:
  Environment(EnvSpec spec, Rng rng);
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  int obs_dim() const { return spec_.obs_dim(); }
  int action_count() const { return spec_.action_count(); }

  Vector reset();
  StepResult step(int action);

  bool done() const { return done_; }
  int episode_steps() const { return episode_steps_; }

 protected:
  virtual Vector do_reset() = 0;
  // Returns the transition ignoring the step cap; the base class applies it.
  virtual StepResult do_step(int action) = 0;

  Rng& rng() { return rng_; }

 private:
  EnvSpec spec_;
  Rng rng_;
  bool done_ = true;
  bool started_ = false;
  int episode_steps_ = 0;
};

// Environment with RNG stream (seed, index).
std::unique_ptr<Environment> make_environment(const EnvSpec& spec, std::uint64_t seed,
                                              std::uint64_t index);
std::unique_ptr<Environment> make_environment(const EnvSpec& spec, Rng rng);

class ChainMdp final : public Environment {
 public:
  ChainMdp(const EnvSpec& spec, Rng rng);
  int state() const { return state_; }

 protected:
  Vector do_reset() override;
  StepResult do_step(int action) override;

 private:
  Vector observe() const;
  int state_ = 0;
};

class GridWorld final : public Environment {
 public:
  enum Action { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

  GridWorld(const EnvSpec& spec, Rng rng);
  int x() const { return x_; }
  int y() const { return y_; }

 protected:
  Vector do_reset() override;
  StepResult do_step(int action) override;

 private:
  Vector observe() const;
  int x_ = 0;
  int y_ = 0;
};

struct CartPoleState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
};

class CartPoleLite final : public Environment {
 public:
  CartPoleLite(const EnvSpec& spec, Rng rng);

  const CartPoleState& state() const { return state_; }
  // Overrides the physical state of a running episode.
  void set_state(const CartPoleState& state) { state_ = state; }

 protected:
  Vector do_reset() override;
  StepResult do_step(int action) override;

 private:
  Vector observe() const;
  CartPoleState state_;
};

// Explicit model of a tabular environment. The goal state is absorbing.
struct TabularModel {
  struct Outcome {
    double probability;
    int next_state;
    double reward;
  };
  int num_states = 0;
  int num_actions = 0;
  int start_state = 0;
  std::vector<bool> terminal;
  std::vector<std::vector<std::vector<Outcome>>> outcomes;  // [state][action]
};

TabularModel build_tabular_model(const EnvSpec& spec);

struct TabularSolution {
  std::vector<double> values;               // [state]
  std::vector<std::vector<double>> q;       // [state][action]
  std::vector<int> greedy_action;           // lowest index on ties
  int iterations = 0;
  double residual = 0.0;
};

TabularSolution value_iteration(const TabularModel& model, double gamma,
                                double tolerance = 1e-10, int max_iterations = 10'000'000);

// Optimal expected discounted return from the start state.
double optimal_return(const EnvSpec& spec, double gamma);

// State index encoded by a one-hot observation of a tabular environment.
int state_from_observation(const Vector& observation);

}  // namespace distillery::envs

#endif  // DISTILLERY_ENVS_HPP_
