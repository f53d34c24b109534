#include "distillery/nn.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "distillery/errors.hpp"

namespace distillery::nn {
namespace {

std::uint64_t next_net_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

DenseLayer zero_layer(int in, int out, Activation activation) {
  return DenseLayer{Matrix::Zero(out, in), Vector::Zero(out), activation};
}

void init_layer(DenseLayer& layer, double gain, Rng& rng) {
  const double limit = gain * std::sqrt(3.0 / static_cast<double>(layer.in()));
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      layer.weight(r, c) = rng.uniform(-limit, limit);
  layer.bias.setZero();
}

std::size_t layer_size(const DenseLayer& layer) {
  return static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
}

void write_layer(const Matrix& dw, const Vector& db, Vector& flat, Eigen::Index& offset) {
  for (Eigen::Index r = 0; r < dw.rows(); ++r)
    for (Eigen::Index c = 0; c < dw.cols(); ++c) flat[offset++] = dw(r, c);
  for (Eigen::Index i = 0; i < db.size(); ++i) flat[offset++] = db[i];
}

void read_layer(DenseLayer& layer, const Vector& flat, Eigen::Index& offset) {
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = flat[offset++];
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = flat[offset++];
}

void apply_activation(Matrix& z, Activation activation) {
  if (activation == Activation::kTanh) z = z.array().tanh().matrix();
}

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix z = x * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

}  // namespace

const char* to_string(Activation activation) {
  switch (activation) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "tanh") return Activation::kTanh;
  fail(ErrorKind::kConfig, "unknown activation '" + std::string(name) + "'");
}

std::string Topology::describe() const {
  std::ostringstream out;
  out << "obs_dim=" << obs_dim << " actions=" << action_count << " hidden=[";
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) out << ',';
    out << hidden[i] << ':' << to_string(activations[i]);
  }
  out << ']';
  return out.str();
}

Topology make_topology(int obs_dim, int action_count, std::vector<int> hidden,
                       Activation activation) {
  Topology t;
  t.obs_dim = obs_dim;
  t.action_count = action_count;
  t.activations.assign(hidden.size(), activation);
  t.hidden = std::move(hidden);
  return t;
}

std::size_t parameter_count(const Topology& topology) {
  std::size_t count = 0;
  std::size_t in = static_cast<std::size_t>(topology.obs_dim);
  for (int width : topology.hidden) {
    count += in * width + width;
    in = static_cast<std::size_t>(width);
  }
  count += in * topology.action_count + topology.action_count;
  count += in + 1;
  return count;
}

const char* to_string(CapacityTier tier) {
  switch (tier) {
    case CapacityTier::kHigh: return "high";
    case CapacityTier::kMedium: return "medium";
    case CapacityTier::kLow: return "low";
  }
  return "?";
}

CapacityTier parse_tier(std::string_view name) {
  if (name == "high") return CapacityTier::kHigh;
  if (name == "medium") return CapacityTier::kMedium;
  if (name == "low") return CapacityTier::kLow;
  fail(ErrorKind::kConfig, "unknown capacity tier '" + std::string(name) + "'");
}

const std::vector<int>& TierWidths::widths(CapacityTier tier) const {
  switch (tier) {
    case CapacityTier::kHigh: return high;
    case CapacityTier::kMedium: return medium;
    case CapacityTier::kLow: return low;
  }
  return high;
}

ActorCriticNet::ActorCriticNet(const Topology& topology)
    : topology_(topology), id_(next_net_id()) {
  if (topology.obs_dim < 1) fail(ErrorKind::kConfig, "obs_dim must be positive");
  if (topology.action_count < 2) fail(ErrorKind::kConfig, "action_count must be at least 2");
  if (topology.activations.size() != topology.hidden.size())
    fail(ErrorKind::kConfig, "one activation per hidden layer is required");
  int in = topology.obs_dim;
  for (std::size_t i = 0; i < topology.hidden.size(); ++i) {
    if (topology.hidden[i] < 1) fail(ErrorKind::kConfig, "hidden widths must be positive");
    body_.push_back(zero_layer(in, topology.hidden[i], topology.activations[i]));
    in = topology.hidden[i];
  }
  policy_head_ = zero_layer(in, topology.action_count, Activation::kLinear);
  value_head_ = zero_layer(in, 1, Activation::kLinear);
}

ActorCriticNet ActorCriticNet::initialized(const Topology& topology, Rng& rng) {
  ActorCriticNet net(topology);
  for (auto& layer : net.body_) init_layer(layer, 1.0, rng);
  init_layer(net.policy_head_, 0.01, rng);
  init_layer(net.value_head_, 1.0, rng);
  return net;
}

ActorCriticNet::ActorCriticNet(const ActorCriticNet& other)
    : topology_(other.topology_),
      body_(other.body_),
      policy_head_(other.policy_head_),
      value_head_(other.value_head_),
      id_(next_net_id()) {}

ActorCriticNet& ActorCriticNet::operator=(const ActorCriticNet& other) {
  if (this != &other) {
    topology_ = other.topology_;
    body_ = other.body_;
    policy_head_ = other.policy_head_;
    value_head_ = other.value_head_;
    touch();
  }
  return *this;
}

DenseLayer& ActorCriticNet::mutable_body(std::size_t index) {
  if (index >= body_.size()) fail(ErrorKind::kUsage, "body layer index out of range");
  touch();
  return body_[index];
}

DenseLayer& ActorCriticNet::mutable_policy_head() {
  touch();
  return policy_head_;
}

DenseLayer& ActorCriticNet::mutable_value_head() {
  touch();
  return value_head_;
}

std::size_t ActorCriticNet::parameter_count() const {
  std::size_t count = layer_size(policy_head_) + layer_size(value_head_);
  for (const auto& layer : body_) count += layer_size(layer);
  return count;
}

Vector ActorCriticNet::flat_parameters() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index offset = 0;
  for (const auto& layer : body_) write_layer(layer.weight, layer.bias, flat, offset);
  write_layer(policy_head_.weight, policy_head_.bias, flat, offset);
  write_layer(value_head_.weight, value_head_.bias, flat, offset);
  return flat;
}

void ActorCriticNet::set_flat_parameters(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count())
    fail(ErrorKind::kConfig, "parameter vector has " + std::to_string(flat.size()) +
                                 " entries, network needs " + std::to_string(parameter_count()));
  if (!flat.allFinite()) fail(ErrorKind::kNumeric, "non-finite parameter vector");
  Eigen::Index offset = 0;
  for (auto& layer : body_) read_layer(layer, flat, offset);
  read_layer(policy_head_, flat, offset);
  read_layer(value_head_, flat, offset);
  touch();
}

void ActorCriticNet::reinitialize_value_head(Rng& rng) {
  init_layer(value_head_, 1.0, rng);
  touch();
}

bool ActorCriticNet::all_finite() const {
  auto finite = [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); };
  for (const auto& layer : body_)
    if (!finite(layer)) return false;
  return finite(policy_head_) && finite(value_head_);
}

ForwardResult forward(const ActorCriticNet& net, const Matrix& obs_batch) {
  if (obs_batch.rows() < 1) fail(ErrorKind::kConfig, "forward needs at least one observation");
  if (obs_batch.cols() != net.obs_dim())
    fail(ErrorKind::kConfig, "observation width " + std::to_string(obs_batch.cols()) +
                                 " does not match obs_dim " + std::to_string(net.obs_dim()));
  if (!obs_batch.allFinite()) fail(ErrorKind::kNumeric, "non-finite observation");

  ForwardResult result;
  result.cache.net_id = net.id();
  result.cache.generation = net.generation();
  result.cache.layer_inputs.reserve(net.body().size() + 1);
  result.cache.layer_inputs.push_back(obs_batch);

  for (std::size_t i = 0; i < net.body().size(); ++i) {
    const DenseLayer& layer = net.body()[i];
    Matrix z = affine(result.cache.layer_inputs.back(), layer);
    apply_activation(z, layer.activation);
    if (!z.allFinite())
      fail(ErrorKind::kNumeric, "non-finite activation in body layer " + std::to_string(i));
    result.cache.layer_inputs.push_back(std::move(z));
  }
  const Matrix& features = result.cache.layer_inputs.back();
  result.logits = affine(features, net.policy_head());
  if (!result.logits.allFinite())
    fail(ErrorKind::kNumeric, "non-finite output in policy head (layer " +
                                  std::to_string(net.body().size()) + ")");
  result.values = affine(features, net.value_head()).col(0);
  if (!result.values.allFinite())
    fail(ErrorKind::kNumeric, "non-finite output in value head (layer " +
                                  std::to_string(net.body().size() + 1) + ")");
  return result;
}

Gradients backward(const ActorCriticNet& net, const ForwardCache& cache,
                   const Matrix& dloss_dlogits, const Vector& dloss_dvalues) {
  if (cache.net_id != net.id() || cache.generation != net.generation())
    fail(ErrorKind::kUsage, "forward cache does not belong to the current network parameters");
  if (cache.layer_inputs.size() != net.body().size() + 1)
    fail(ErrorKind::kUsage, "forward cache has the wrong number of layers");
  const Matrix& features = cache.layer_inputs.back();
  const Eigen::Index batch = features.rows();
  if (dloss_dlogits.rows() != batch || dloss_dlogits.cols() != net.action_count() ||
      dloss_dvalues.size() != batch)
    fail(ErrorKind::kUsage, "output gradients do not match the cached batch");

  const std::size_t n_body = net.body().size();
  std::vector<Matrix> dw(n_body);
  std::vector<Vector> db(n_body);

  const Matrix dw_policy = dloss_dlogits.transpose() * features;
  const Vector db_policy = dloss_dlogits.colwise().sum().transpose();
  const Matrix dw_value = dloss_dvalues.transpose() * features;
  const Vector db_value = Vector::Constant(1, dloss_dvalues.sum());

  Matrix upstream = dloss_dlogits * net.policy_head().weight +
                    dloss_dvalues * net.value_head().weight;
  for (std::size_t k = n_body; k-- > 0;) {
    const DenseLayer& layer = net.body()[k];
    const Matrix& out = cache.layer_inputs[k + 1];
    Matrix dz = upstream;
    if (layer.activation == Activation::kTanh)
      dz = (upstream.array() * (1.0 - out.array().square())).matrix();
    dw[k] = dz.transpose() * cache.layer_inputs[k];
    db[k] = dz.colwise().sum().transpose();
    if (k > 0) upstream = dz * layer.weight;
  }

  Gradients grads;
  grads.flat.resize(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < n_body; ++k) write_layer(dw[k], db[k], grads.flat, offset);
  write_layer(dw_policy, db_policy, grads.flat, offset);
  write_layer(dw_value, db_value, grads.flat, offset);
  return grads;
}

Vector softmax(const Vector& logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kDomain, "softmax temperature must be positive");
  if (logits.size() < 1) fail(ErrorKind::kDomain, "softmax of an empty vector");
  if (!logits.allFinite()) fail(ErrorKind::kNumeric, "non-finite logits");
  const Vector scaled = logits / temperature;
  const Vector shifted = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  return shifted / shifted.sum();
}

Vector log_softmax(const Vector& logits) {
  if (logits.size() < 1) fail(ErrorKind::kDomain, "log_softmax of an empty vector");
  const double max = logits.maxCoeff();
  const double lse = max + std::log((logits.array() - max).exp().sum());
  return (logits.array() - lse).matrix();
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out.row(r) = softmax(logits.row(r).transpose(), temperature).transpose();
  return out;
}

double entropy(const Vector& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

AdamState AdamState::zeros(Eigen::Index size) {
  AdamState state;
  state.first_moment = Vector::Zero(size);
  state.second_moment = Vector::Zero(size);
  return state;
}

AdamState AdamState::for_net(const ActorCriticNet& net) {
  return zeros(static_cast<Eigen::Index>(net.parameter_count()));
}

void adam_step(Vector& params, const Vector& grads, AdamState& state, double stepsize) {
  if (!(stepsize > 0.0)) fail(ErrorKind::kDomain, "Adam stepsize must be positive");
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    fail(ErrorKind::kConfig, "Adam state, gradient and parameter shapes differ");
  if (!grads.allFinite()) fail(ErrorKind::kNumeric, "non-finite gradient; Adam update rejected");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const Vector m_hat = state.first_moment / correction1;
  const Vector v_hat = state.second_moment / correction2;
  params.array() -= stepsize * m_hat.array() / (v_hat.array().sqrt() + state.epsilon);
  if (!params.allFinite()) fail(ErrorKind::kNumeric, "Adam produced non-finite parameters");
}

void adam_step(ActorCriticNet& net, const Gradients& grads, AdamState& state, double stepsize) {
  Vector params = net.flat_parameters();
  adam_step(params, grads.flat, state, stepsize);
  net.set_flat_parameters(params);
}

}  // namespace distillery::nn
