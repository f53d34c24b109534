#include "distillery/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "distillery/errors.hpp"

namespace distillery::eval {
namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& s, std::string_view what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    fail(ErrorKind::kFormat, "cannot parse " + std::string(what) + " value '" + s + "'");
  return value;
}

std::string percent_text(double pct) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << pct << '%';
  return out.str();
}

}  // namespace

Vector NetPolicy::action_probabilities(const Vector& observation) const {
  const nn::ForwardResult fwd = nn::forward(net_, observation.transpose());
  return nn::softmax(fwd.logits.row(0).transpose());
}

Vector TabularGreedyPolicy::action_probabilities(const Vector& observation) const {
  const int state = envs::state_from_observation(observation);
  if (state < 0 || state >= static_cast<int>(greedy_action_.size()))
    fail(ErrorKind::kDomain, "observation does not encode a known state");
  Vector probs = Vector::Zero(action_count_);
  probs[greedy_action_[static_cast<std::size_t>(state)]] = 1.0;
  return probs;
}

EvalReport EvalReport::from_scores(std::vector<double> scores, std::int64_t env_steps) {
  if (scores.empty()) fail(ErrorKind::kDomain, "an evaluation report needs at least one episode");
  EvalReport r;
  r.episodes = static_cast<std::int64_t>(scores.size());
  r.env_steps_used = env_steps;
  const double n = static_cast<double>(scores.size());
  // Summing offsets from the first score keeps identical episodes exact.
  const double pivot = scores.front();
  double offset = 0.0;
  for (double s : scores) offset += s - pivot;
  r.mean = pivot + offset / n;
  double var = 0.0;
  for (double s : scores) var += (s - r.mean) * (s - r.mean);
  r.std = std::sqrt(var / n);
  r.high = *std::max_element(scores.begin(), scores.end());
  r.episode_scores = std::move(scores);
  return r;
}

double EvalReport::standard_error() const {
  return std / std::sqrt(static_cast<double>(std::max<std::int64_t>(episodes, 1)));
}

EvalReport evaluate(const Policy& policy, const envs::EnvSpec& spec, std::int64_t total_steps,
                    std::uint64_t seed) {
  if (total_steps < 1) fail(ErrorKind::kDomain, "evaluation needs at least one step");
  if (policy.action_count() != spec.action_count())
    fail(ErrorKind::kConfig, "policy has " + std::to_string(policy.action_count()) +
                                 " actions, environment " + spec.describe() + " has " +
                                 std::to_string(spec.action_count()));
  const Rng root(seed, stream_id("eval"));
  auto env = envs::make_environment(spec, root.substream("env"));
  Rng action_rng = root.substream("action");

  std::vector<double> scores;
  std::int64_t steps = 0;
  while (steps < total_steps) {
    Vector obs = env->reset();
    double score = 0.0;
    while (true) {
      const Vector probs = policy.action_probabilities(obs);
      const auto action = static_cast<int>(sample_categorical(
          std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
          action_rng));
      envs::StepResult step = env->step(action);
      ++steps;
      score += step.reward;
      if (step.done) break;
      obs = std::move(step.observation);
    }
    scores.push_back(score);
  }
  return EvalReport::from_scores(std::move(scores), steps);
}

double geometric_mean_ratio(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    fail(ErrorKind::kDomain, "geometric mean ratio needs two equal-length, non-empty lists");
  double log_a = 0.0;
  double log_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] > 0.0) || !std::isfinite(a[i]))
      fail(ErrorKind::kDomain, "non-positive score at index " + std::to_string(i) + " of first list");
    if (!(b[i] > 0.0) || !std::isfinite(b[i]))
      fail(ErrorKind::kDomain, "non-positive score at index " + std::to_string(i) + " of second list");
    log_a += std::log(a[i]);
    log_b += std::log(b[i]);
  }
  const double n = static_cast<double>(a.size());
  return 100.0 * std::exp((log_a - log_b) / n);
}

ComparisonTable comparison_report(const std::vector<ScoreColumn>& columns,
                                  const std::string& teacher,
                                  const std::optional<std::string>& baseline) {
  if (columns.empty()) fail(ErrorKind::kConfig, "comparison needs at least one column");
  ComparisonTable table;
  table.teacher = teacher;
  table.baseline = baseline;
  for (const auto& [row, cell] : columns.front().rows) table.rows.push_back(row);

  std::vector<std::map<std::string, ScoreCell>> lookup;
  for (const auto& col : columns) {
    table.columns.push_back(col.name);
    lookup.emplace_back(col.rows.begin(), col.rows.end());
    for (const auto& [row, cell] : col.rows)
      if (std::find(table.rows.begin(), table.rows.end(), row) == table.rows.end())
        fail(ErrorKind::kConfig, "row '" + row + "' of column '" + col.name +
                                     "' is missing from column '" + columns.front().name + "'");
  }

  table.cells.assign(table.rows.size(), std::vector<ScoreCell>(columns.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto it = lookup[c].find(table.rows[r]);
      if (it == lookup[c].end())
        fail(ErrorKind::kConfig, "row '" + table.rows[r] + "' is missing from column '" +
                                     columns[c].name + "'");
      table.cells[r][c] = it->second;
    }
  }

  auto column_means = [&](std::size_t c) {
    std::vector<double> means;
    for (std::size_t r = 0; r < table.rows.size(); ++r) means.push_back(table.cells[r][c].mean);
    return means;
  };
  auto index_of = [&](const std::string& name) {
    const auto it = std::find(table.columns.begin(), table.columns.end(), name);
    if (it == table.columns.end()) fail(ErrorKind::kConfig, "no column named '" + name + "'");
    return static_cast<std::size_t>(it - table.columns.begin());
  };

  const std::vector<double> teacher_means = column_means(index_of(teacher));
  for (std::size_t c = 0; c < columns.size(); ++c)
    table.percent_of_teacher.push_back(geometric_mean_ratio(column_means(c), teacher_means));
  if (baseline) {
    const std::vector<double> baseline_means = column_means(index_of(*baseline));
    for (std::size_t c = 0; c < columns.size(); ++c)
      table.percent_of_baseline.push_back(geometric_mean_ratio(column_means(c), baseline_means));
  }
  return table;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "kind,row,agent,high,mean,std,percent\n";
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const ScoreCell& cell = cells[r][c];
      out << "cell," << rows[r] << ',' << columns[c] << ',' << format_number(cell.high) << ','
          << format_number(cell.mean) << ',' << format_number(cell.std) << ",\n";
    }
  for (std::size_t c = 0; c < columns.size(); ++c)
    out << "ratio,% of " << teacher << ',' << columns[c] << ",,,,"
        << format_number(percent_of_teacher[c]) << '\n';
  if (baseline)
    for (std::size_t c = 0; c < columns.size(); ++c)
      out << "ratio,% of " << *baseline << ',' << columns[c] << ",,,,"
          << format_number(percent_of_baseline[c]) << '\n';
  return out.str();
}

namespace {

std::string short_number(double value) {
  std::ostringstream out;
  out << std::setprecision(4) << value;
  return out.str();
}

}  // namespace

std::string ComparisonTable::to_text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{""};
  header.insert(header.end(), columns.begin(), columns.end());
  grid.push_back(header);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::string> line{rows[r]};
    for (const ScoreCell& cell : cells[r])
      line.push_back(short_number(cell.high) + " | " + short_number(cell.mean) + " +- " +
                     short_number(cell.std));
    grid.push_back(line);
  }
  std::vector<std::string> teacher_line{"% of " + teacher};
  for (double pct : percent_of_teacher) teacher_line.push_back(percent_text(pct));
  grid.push_back(teacher_line);
  if (baseline) {
    std::vector<std::string> baseline_line{"% of " + *baseline};
    for (double pct : percent_of_baseline) baseline_line.push_back(percent_text(pct));
    grid.push_back(baseline_line);
  }

  std::vector<std::size_t> width(grid.front().size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      out << (c == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << line[c];
    }
    out << '\n';
  }
  return out.str();
}

std::string eval_csv(const EvalReport& report, const std::string& env, const std::string& agent,
                     const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << '\n';
  out << "env,agent,episodes,mean,std,high\n";
  out << env << ',' << agent << ',' << report.episodes << ',' << format_number(report.mean) << ','
      << format_number(report.std) << ',' << format_number(report.high) << '\n';
  return out.str();
}

ScoreColumn parse_score_csv(std::string_view text, const std::string& column_name) {
  ScoreColumn column{column_name, {}};
  std::vector<std::string> header;
  std::map<std::string, std::size_t> index;
  for (const std::string& raw : split(text, '\n')) {
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::vector<std::string> fields = split(line, ',');
    if (header.empty()) {
      header = fields;
      for (std::size_t i = 0; i < header.size(); ++i) index[trim(header[i])] = i;
      for (const char* required : {"env", "mean"})
        if (!index.count(required))
          fail(ErrorKind::kFormat, "score CSV for '" + column_name + "' lacks a '" + required +
                                       "' column");
      continue;
    }
    if (fields.size() != header.size())
      fail(ErrorKind::kFormat, "score CSV row has " + std::to_string(fields.size()) +
                                   " fields, header has " + std::to_string(header.size()));
    auto field = [&](const char* name) -> std::optional<std::string> {
      const auto it = index.find(name);
      if (it == index.end()) return std::nullopt;
      return trim(fields[it->second]);
    };
    ScoreCell cell;
    cell.mean = parse_double(*field("mean"), "mean");
    cell.std = field("std") ? parse_double(*field("std"), "std") : 0.0;
    cell.high = field("high") ? parse_double(*field("high"), "high") : cell.mean;
    cell.episodes = field("episodes") ? static_cast<std::int64_t>(parse_double(*field("episodes"), "episodes")) : 0;
    column.rows.emplace_back(*field("env"), cell);
  }
  if (column.rows.empty()) fail(ErrorKind::kFormat, "score CSV for '" + column_name + "' has no rows");
  return column;
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

}  // namespace distillery::eval
