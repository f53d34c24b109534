#ifndef DISTILLERY_NN_HPP_
#define DISTILLERY_NN_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "distillery/rng.hpp"

namespace distillery::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kLinear, kTanh };

const char* to_string(Activation activation);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Matrix weight;  // [out x in]
  Vector bias;    // [out]
  Activation activation = Activation::kLinear;

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }
};

// Shape of an actor-critic network: a dense body followed by a policy head
// (action logits) and a value head (one scalar), both reading the final body
// activation. Heads are always linear.
struct Topology {
  int obs_dim = 0;
  int action_count = 0;
  std::vector<int> hidden;
  std::vector<Activation> activations;  // one per hidden layer

  bool operator==(const Topology&) const = default;
  std::string describe() const;
};

Topology make_topology(int obs_dim, int action_count, std::vector<int> hidden,
                       Activation activation = Activation::kTanh);

std::size_t parameter_count(const Topology& topology);

enum class CapacityTier { kHigh, kMedium, kLow };

const char* to_string(CapacityTier tier);
CapacityTier parse_tier(std::string_view name);

// Hidden widths per tier. Defaults keep medium at roughly a quarter and low
// under a tenth of the high tier's parameters on the built-in environments.
struct TierWidths {
  std::vector<int> high{64, 64};
  std::vector<int> medium{32, 32};
  std::vector<int> low{16, 16};

  const std::vector<int>& widths(CapacityTier tier) const;
};

class ActorCriticNet;

// Everything backward needs from a forward pass. Tagged with the network
// identity and parameter generation so a stale cache is detected.
struct ForwardCache {
  std::uint64_t net_id = 0;
  std::uint64_t generation = 0;
  std::vector<Matrix> layer_inputs;  // input of body layer i; last = features
};

struct ForwardResult {
  Matrix logits;  // [B x |A|]
  Vector values;  // [B]
  ForwardCache cache;
};

// Flat gradient in checkpoint parameter order: for each layer (body..., policy
// head, value head), weights row-major then biases.
struct Gradients {
  Vector flat;
};

class ActorCriticNet {
 public:
  // All parameters zero.
  explicit ActorCriticNet(const Topology& topology);

  // Scaled-uniform init: U(-g*sqrt(3/in), g*sqrt(3/in)), zero biases, with
  // gain 1 for body and value head and 0.01 for the policy head.
  static ActorCriticNet initialized(const Topology& topology, Rng& rng);

  ActorCriticNet(const ActorCriticNet& other);
  ActorCriticNet& operator=(const ActorCriticNet& other);
  ActorCriticNet(ActorCriticNet&&) noexcept = default;
  ActorCriticNet& operator=(ActorCriticNet&&) noexcept = default;

  const Topology& topology() const { return topology_; }
  int obs_dim() const { return topology_.obs_dim; }
  int action_count() const { return topology_.action_count; }

  const std::vector<DenseLayer>& body() const { return body_; }
  const DenseLayer& policy_head() const { return policy_head_; }
  const DenseLayer& value_head() const { return value_head_; }

  // Mutable access bumps the generation, invalidating outstanding caches.
  DenseLayer& mutable_body(std::size_t index);
  DenseLayer& mutable_policy_head();
  DenseLayer& mutable_value_head();

  std::size_t parameter_count() const;
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

  void reinitialize_value_head(Rng& rng);

  bool all_finite() const;

  std::uint64_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

 private:
  void touch() { ++generation_; }

  Topology topology_;
  std::vector<DenseLayer> body_;
  DenseLayer policy_head_;
  DenseLayer value_head_;
  std::uint64_t id_;
  std::uint64_t generation_ = 0;
};

ForwardResult forward(const ActorCriticNet& net, const Matrix& obs_batch);

// Reverse pass. The supplied output gradients are those of the scalar loss, so
// any batch averaging must already be folded in.
Gradients backward(const ActorCriticNet& net, const ForwardCache& cache,
                   const Matrix& dloss_dlogits, const Vector& dloss_dvalues);

// Numerically stable softmax of logits / temperature.
Vector softmax(const Vector& logits, double temperature = 1.0);
Vector log_softmax(const Vector& logits);
Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);

// Shannon entropy (nats) of a probability vector; 0 log 0 := 0.
double entropy(const Vector& probs);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(Eigen::Index size);
  static AdamState for_net(const ActorCriticNet& net);
};

// Bias-corrected Adam update. Rejects non-finite gradients before touching
// any state.
void adam_step(Vector& params, const Vector& grads, AdamState& state,
               double stepsize);
void adam_step(ActorCriticNet& net, const Gradients& grads, AdamState& state,
               double stepsize);

}  // namespace distillery::nn

#endif  // DISTILLERY_NN_HPP_
