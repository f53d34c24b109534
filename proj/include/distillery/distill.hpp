#ifndef DISTILLERY_DISTILL_HPP_
#define DISTILLERY_DISTILL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "distillery/envs.hpp"
#include "distillery/eval.hpp"
#include "distillery/nn.hpp"
#include "distillery/ppo.hpp"

namespace distillery::distill {

using nn::Matrix;
using nn::Vector;

struct ReplayRecord {
  Vector observation;    // [obs_dim]
  Vector teacher_probs;  // [action_count]
  int action = 0;        // action the teacher sampled
};

struct ReplayMetadata {
  std::string teacher_id;
  envs::EnvSpec env;
  std::uint64_t seed = 0;
  std::string timestamp;
  std::string config_hash;
};

// Off-policy distillation dataset. Values are held at f32 precision so the
// in-memory buffer equals what the on-disk format reproduces.
struct ReplayBuffer {
  int obs_dim = 0;
  int action_count = 0;
  std::vector<ReplayRecord> records;
  ReplayMetadata metadata;

  std::size_t size() const { return records.size(); }
  void validate() const;
};

// The teacher samples from softmax(logits); each visited observation is
// recorded with the full probability vector and the sampled action.
ReplayBuffer collect_replay(const nn::ActorCriticNet& teacher, const envs::EnvSpec& spec,
                            std::int64_t n_records, std::uint64_t seed,
                            const std::string& teacher_id = "");

// Batch mean of sum_i p_t,i log(p_t,i / p_s,i). Student probabilities are
// softmax(logits) clamped below at `floor` and renormalized; teacher rows are
// renormalized too (stored rows carry f32 rounding) and zeros contribute nothing.
double kl_loss(const Matrix& teacher_probs, const Matrix& student_logits, double floor = 1e-8);

// Gradient of the batch-mean KL w.r.t. the logits: (softmax(z) - p_t) / B
// per row. Exact when the floor is inactive.
Matrix kl_loss_grad(const Matrix& teacher_probs, const Matrix& student_logits);

// softmax(values / temperature).
Vector sharpen_distribution(const Vector& values, double temperature);

// Sharpening applied to a stored probability vector: equivalent to dividing
// the logits that produced it by `temperature`. Zero entries stay zero.
Vector sharpen_probabilities(const Vector& probs, double temperature);

struct DistillConfig {
  int epochs = 10;
  int minibatch_size = 32;
  double stepsize = 3e-4;
  double temperature = 1.0;
  double prob_floor = 1e-8;

  void validate() const;
};

struct DistillResult {
  nn::ActorCriticNet student;
  std::vector<double> epoch_loss;  // mean KL over each epoch's minibatches
};

// Offline: never touches an environment. Only the body and policy head move.
DistillResult distill(nn::ActorCriticNet student, const ReplayBuffer& buffer,
                      const DistillConfig& config, std::uint64_t seed);

// PPO from the distilled actor with a freshly initialized value head. The
// first `critic_warmup_updates` rollouts only fit the value head (see
// ppo::fit_value_head) and come out of the step budget. A budget smaller than
// one rollout returns the student unchanged.
ppo::TrainResult finetune(const nn::ActorCriticNet& student, const envs::EnvSpec& spec,
                          const ppo::PpoConfig& config, std::uint64_t seed,
                          int critic_warmup_updates = 2);

struct SweepRow {
  nn::CapacityTier tier;
  int epochs;
  eval::EvalReport report;
};

struct SweepOptions {
  DistillConfig distill;  // epochs overridden per row
  nn::TierWidths widths;
  std::int64_t eval_steps = 50'000;
  unsigned threads = 0;   // 0 = hardware concurrency
};

// One freshly initialized student per (tier, epochs), distilled and then
// evaluated. Rows come back in input order (tiers outer, epochs inner).
std::vector<SweepRow> epoch_sweep(const std::vector<nn::CapacityTier>& tiers,
                                  const std::vector<int>& epoch_list, const ReplayBuffer& buffer,
                                  const envs::EnvSpec& spec, const SweepOptions& options,
                                  std::uint64_t seed);

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& env,
                      const std::string& config_hash);

}  // namespace distillery::distill

#endif  // DISTILLERY_DISTILL_HPP_
