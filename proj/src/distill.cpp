#include "distillery/distill.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "distillery/errors.hpp"

namespace distillery::distill {
namespace {

Vector to_f32_precision(const Vector& v) {
  return v.cast<float>().cast<double>();
}

std::uint64_t row_seed(std::uint64_t seed, nn::CapacityTier tier, int epochs) {
  Rng rng = Rng(seed, stream_id("distill.sweep"))
                .substream(nn::to_string(tier))
                .substream(static_cast<std::uint64_t>(epochs));
  return rng.next_u64();
}

}  // namespace

void ReplayBuffer::validate() const {
  if (obs_dim < 1 || action_count < 2)
    fail(ErrorKind::kConfig, "replay buffer has invalid dimensions");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ReplayRecord& r = records[i];
    if (r.observation.size() != obs_dim || r.teacher_probs.size() != action_count)
      fail(ErrorKind::kConfig, "replay record " + std::to_string(i) + " has the wrong shape");
    if (r.action < 0 || r.action >= action_count)
      fail(ErrorKind::kConfig, "replay record " + std::to_string(i) + " has an invalid action");
    if ((r.teacher_probs.array() < 0.0).any() || std::abs(r.teacher_probs.sum() - 1.0) > 1e-6)
      fail(ErrorKind::kConfig, "replay record " + std::to_string(i) +
                                   " does not hold a probability vector");
  }
}

ReplayBuffer collect_replay(const nn::ActorCriticNet& teacher, const envs::EnvSpec& spec,
                            std::int64_t n_records, std::uint64_t seed,
                            const std::string& teacher_id) {
  if (n_records < 1) fail(ErrorKind::kDomain, "collection needs at least one record");
  if (teacher.obs_dim() != spec.obs_dim() || teacher.action_count() != spec.action_count())
    fail(ErrorKind::kConfig, "teacher shape " + teacher.topology().describe() +
                                 " does not match environment " + spec.describe());

  const Rng root(seed, stream_id("distill.collect"));
  auto env = envs::make_environment(spec, root.substream("env"));
  Rng action_rng = root.substream("action");

  ReplayBuffer buffer;
  buffer.obs_dim = spec.obs_dim();
  buffer.action_count = spec.action_count();
  buffer.metadata.teacher_id = teacher_id;
  buffer.metadata.env = spec;
  buffer.metadata.seed = seed;
  buffer.records.reserve(static_cast<std::size_t>(n_records));

  Vector obs = env->reset();
  while (static_cast<std::int64_t>(buffer.records.size()) < n_records) {
    const nn::ForwardResult fwd = nn::forward(teacher, obs.transpose());
    const Vector probs = nn::softmax(fwd.logits.row(0).transpose());
    const auto action = static_cast<int>(sample_categorical(
        std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
        action_rng));
    buffer.records.push_back({to_f32_precision(obs), to_f32_precision(probs), action});

    envs::StepResult step = env->step(action);
    obs = step.done ? env->reset() : std::move(step.observation);
  }
  return buffer;
}

double kl_loss(const Matrix& teacher_probs, const Matrix& student_logits, double floor) {
  if (teacher_probs.rows() != student_logits.rows() ||
      teacher_probs.cols() != student_logits.cols() || teacher_probs.rows() < 1)
    fail(ErrorKind::kConfig, "teacher and student batches differ in shape");
  if (!student_logits.allFinite()) fail(ErrorKind::kNumeric, "non-finite student logits");

  double total = 0.0;
  for (Eigen::Index r = 0; r < teacher_probs.rows(); ++r) {
    Vector student = nn::softmax(student_logits.row(r).transpose());
    student = student.cwiseMax(floor);
    student /= student.sum();
    const double mass = teacher_probs.row(r).sum();
    for (Eigen::Index j = 0; j < teacher_probs.cols(); ++j) {
      const double p = teacher_probs(r, j) / mass;
      if (p > 0.0) total += p * (std::log(p) - std::log(student[j]));
    }
  }
  return total / static_cast<double>(teacher_probs.rows());
}

Matrix kl_loss_grad(const Matrix& teacher_probs, const Matrix& student_logits) {
  if (teacher_probs.rows() != student_logits.rows() ||
      teacher_probs.cols() != student_logits.cols() || teacher_probs.rows() < 1)
    fail(ErrorKind::kConfig, "teacher and student batches differ in shape");
  if (!student_logits.allFinite()) fail(ErrorKind::kNumeric, "non-finite student logits");
  return (nn::softmax_rows(student_logits) - teacher_probs) /
         static_cast<double>(teacher_probs.rows());
}

Vector sharpen_distribution(const Vector& values, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kDomain, "temperature must be positive");
  return nn::softmax(values, temperature);
}

Vector sharpen_probabilities(const Vector& probs, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kDomain, "temperature must be positive");
  if (temperature == 1.0) return probs;
  double max_log = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) max_log = std::max(max_log, std::log(probs[i]));
  Vector out = Vector::Zero(probs.size());
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) out[i] = std::exp((std::log(probs[i]) - max_log) / temperature);
  return out / out.sum();
}

void DistillConfig::validate() const {
  if (epochs < 1) fail(ErrorKind::kConfig, "distill.epochs must be at least 1");
  if (minibatch_size < 1) fail(ErrorKind::kConfig, "distill.minibatch_size must be at least 1");
  if (!(stepsize > 0.0)) fail(ErrorKind::kConfig, "distill.stepsize must be positive");
  if (!(temperature > 0.0)) fail(ErrorKind::kConfig, "distill.temperature must be positive");
  if (!(prob_floor > 0.0 && prob_floor < 1.0))
    fail(ErrorKind::kConfig, "distill.prob_floor must lie in (0, 1)");
}

DistillResult distill(nn::ActorCriticNet student, const ReplayBuffer& buffer,
                      const DistillConfig& config, std::uint64_t seed) {
  config.validate();
  if (buffer.records.empty()) fail(ErrorKind::kConfig, "cannot distill from an empty buffer");
  if (student.obs_dim() != buffer.obs_dim || student.action_count() != buffer.action_count)
    fail(ErrorKind::kConfig, "student shape " + student.topology().describe() +
                                 " does not match buffer obs_dim=" + std::to_string(buffer.obs_dim) +
                                 " actions=" + std::to_string(buffer.action_count));

  const auto n = static_cast<Eigen::Index>(buffer.records.size());
  Matrix observations(n, buffer.obs_dim);
  Matrix targets(n, buffer.action_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ReplayRecord& r = buffer.records[static_cast<std::size_t>(i)];
    observations.row(i) = r.observation.transpose();
    targets.row(i) = sharpen_probabilities(r.teacher_probs, config.temperature).transpose();
  }

  Rng shuffle_rng(seed, stream_id("distill.shuffle"));
  nn::AdamState adam = nn::AdamState::for_net(student);
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  DistillResult result{std::move(student), {}};

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += config.minibatch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(config.minibatch_size, n - start);
      Matrix obs(m, buffer.obs_dim);
      Matrix target(m, buffer.action_count);
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto k = static_cast<Eigen::Index>(order[static_cast<std::size_t>(start + i)]);
        obs.row(i) = observations.row(k);
        target.row(i) = targets.row(k);
      }
      const nn::ForwardResult fwd = nn::forward(result.student, obs);
      const double loss = kl_loss(target, fwd.logits, config.prob_floor);
      if (!std::isfinite(loss)) fail(ErrorKind::kNumeric, "non-finite distillation loss");
      epoch_loss += loss * static_cast<double>(m);
      const Matrix dlogits = kl_loss_grad(target, fwd.logits);
      const nn::Gradients grads =
          nn::backward(result.student, fwd.cache, dlogits, Vector::Zero(m));
      nn::adam_step(result.student, grads, adam, config.stepsize);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return result;
}

ppo::TrainResult finetune(const nn::ActorCriticNet& student, const envs::EnvSpec& spec,
                          const ppo::PpoConfig& config, std::uint64_t seed,
                          int critic_warmup_updates) {
  config.validate();
  if (critic_warmup_updates < 0)
    fail(ErrorKind::kConfig, "critic warm-up must be non-negative");
  if (config.update_count() == 0) return {student, {}, 0};
  ppo::PpoConfig tuned = config;
  tuned.critic_warmup_updates = critic_warmup_updates;
  nn::ActorCriticNet start = student;
  Rng value_rng(seed, stream_id("distill.finetune.value_head"));
  start.reinitialize_value_head(value_rng);
  return ppo::train(spec, start.topology(), tuned, seed, &start);
}

std::vector<SweepRow> epoch_sweep(const std::vector<nn::CapacityTier>& tiers,
                                  const std::vector<int>& epoch_list, const ReplayBuffer& buffer,
                                  const envs::EnvSpec& spec, const SweepOptions& options,
                                  std::uint64_t seed) {
  if (epoch_list.empty()) fail(ErrorKind::kConfig, "epoch sweep needs at least one epoch count");
  if (tiers.empty()) fail(ErrorKind::kConfig, "epoch sweep needs at least one tier");
  for (int e : epoch_list)
    if (e < 1) fail(ErrorKind::kConfig, "epoch counts must be at least 1");

  struct Job {
    nn::CapacityTier tier;
    int epochs;
  };
  std::vector<Job> jobs;
  for (auto tier : tiers)
    for (int e : epoch_list) jobs.push_back({tier, e});

  std::vector<std::optional<SweepRow>> rows(jobs.size());
  auto run = [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::uint64_t s = row_seed(seed, job.tier, job.epochs);
    Rng init_rng(s, stream_id("distill.sweep.init"));
    nn::ActorCriticNet student = nn::ActorCriticNet::initialized(
        ppo::topology_for(spec, job.tier, options.widths), init_rng);
    DistillConfig cfg = options.distill;
    cfg.epochs = job.epochs;
    DistillResult distilled = distill(std::move(student), buffer, cfg, s);
    eval::EvalReport report =
        eval::evaluate(eval::NetPolicy(distilled.student), spec, options.eval_steps, s);
    rows[j] = SweepRow{job.tier, job.epochs, std::move(report)};
  };

  unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < threads; ++w)
      workers.emplace_back([&, w] {
        try {
          for (std::size_t j = next++; j < jobs.size(); j = next++) run(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<SweepRow> out;
  for (auto& row : rows) out.push_back(std::move(*row));
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& env,
                      const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << '\n';
  out << "env,tier,epochs,episodes,mean,std,high,stderr\n";
  for (const SweepRow& row : rows)
    out << env << ',' << nn::to_string(row.tier) << ',' << row.epochs << ','
        << row.report.episodes << ',' << eval::format_number(row.report.mean) << ','
        << eval::format_number(row.report.std) << ',' << eval::format_number(row.report.high)
        << ',' << eval::format_number(row.report.standard_error()) << '\n';
  return out.str();
}

}  // namespace distillery::distill
