#ifndef DISTILLERY_EVAL_HPP_
#define DISTILLERY_EVAL_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distillery/envs.hpp"
#include "distillery/nn.hpp"

namespace distillery::eval {

using nn::Vector;

class Policy {
 public:
  virtual ~Policy() = default;
  virtual int action_count() const = 0;
  virtual Vector action_probabilities(const Vector& observation) const = 0;
};

// Stochastic policy given by softmax of the network's logits.
class NetPolicy final : public Policy {
 public:
  explicit NetPolicy(const nn::ActorCriticNet& net) : net_(net) {}
  int action_count() const override { return net_.action_count(); }
  Vector action_probabilities(const Vector& observation) const override;

 private:
  const nn::ActorCriticNet& net_;
};

// Deterministic greedy policy over a value-iteration Q-table; observations are
// one-hot state encodings.
class TabularGreedyPolicy final : public Policy {
 public:
  TabularGreedyPolicy(std::vector<int> greedy_action, int action_count)
      : greedy_action_(std::move(greedy_action)), action_count_(action_count) {}
  int action_count() const override { return action_count_; }
  Vector action_probabilities(const Vector& observation) const override;

 private:
  std::vector<int> greedy_action_;
  int action_count_;
};

struct EvalReport {
  std::vector<double> episode_scores;
  double mean = 0.0;
  double std = 0.0;  // population
  double high = 0.0;
  std::int64_t episodes = 0;
  std::int64_t env_steps_used = 0;

  static EvalReport from_scores(std::vector<double> scores, std::int64_t env_steps);
  double standard_error() const;
};

// Runs whole episodes until at least total_steps environment steps have been
// taken; the episode in flight at the budget is finished and counted.
EvalReport evaluate(const Policy& policy, const envs::EnvSpec& spec, std::int64_t total_steps,
                    std::uint64_t seed);

// 100 * geomean(a) / geomean(b), computed in log space.
double geometric_mean_ratio(std::span<const double> a, std::span<const double> b);

struct ScoreCell {
  double high = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::int64_t episodes = 0;
};

struct ScoreColumn {
  std::string name;
  std::vector<std::pair<std::string, ScoreCell>> rows;  // (row name, cell)
};

struct ComparisonTable {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<ScoreCell>> cells;  // [row][column]
  std::string teacher;
  std::vector<double> percent_of_teacher;  // per column
  std::optional<std::string> baseline;
  std::vector<double> percent_of_baseline;  // per column, empty without baseline

  std::string to_csv() const;
  std::string to_text() const;
};

// Row order follows the first column. Every column must cover every row.
ComparisonTable comparison_report(const std::vector<ScoreColumn>& columns,
                                  const std::string& teacher,
                                  const std::optional<std::string>& baseline = std::nullopt);

// Evaluation CSV: optional '#' comment lines, header env,agent,episodes,mean,std,high.
std::string eval_csv(const EvalReport& report, const std::string& env, const std::string& agent,
                     const std::string& config_hash);
ScoreColumn parse_score_csv(std::string_view text, const std::string& column_name);

// Shortest decimal text that round-trips the double.
std::string format_number(double value);

}  // namespace distillery::eval

#endif  // DISTILLERY_EVAL_HPP_
