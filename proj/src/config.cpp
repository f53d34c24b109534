#include "distillery/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "distillery/errors.hpp"
#include "distillery/eval.hpp"
#include "distillery/persistence.hpp"

namespace distillery {
namespace {

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    fail(ErrorKind::kConfig, key + ": expected a number, got '" + value + "'");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& value) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    fail(ErrorKind::kConfig, key + ": expected an integer, got '" + value + "'");
  return out;
}

std::vector<int> to_widths(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t comma = value.find(',', start);
    const std::string item = trim(value.substr(start, comma - start));
    const auto w = to_int(key, item);
    if (w < 1) fail(ErrorKind::kConfig, key + ": widths must be positive");
    out.push_back(static_cast<int>(w));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string widths_text(const std::vector<int>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(widths[i]);
  }
  return out;
}

template <typename T>
Field real(T ExperimentConfig::*section, double T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { (c.*section).*member = to_double("", v); },
          [=](const ExperimentConfig& c) { return eval::format_number((c.*section).*member); }};
}

template <typename T, typename I>
Field integer(T ExperimentConfig::*section, I T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) {
            (c.*section).*member = static_cast<I>(to_int("", v));
          },
          [=](const ExperimentConfig& c) { return std::to_string((c.*section).*member); }};
}

Field cart(double envs::CartPoleParams::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { c.env.cartpole.*member = to_double("", v); },
          [=](const ExperimentConfig& c) { return eval::format_number(c.env.cartpole.*member); }};
}

Field widths(std::vector<int> nn::TierWidths::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { c.widths.*member = to_widths("", v); },
          [=](const ExperimentConfig& c) { return widths_text(c.widths.*member); }};
}

const std::map<std::string, Field>& fields() {
  using E = ExperimentConfig;
  static const std::map<std::string, Field> table = {
      {"seed", {[](E& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int("", v)); },
                [](const E& c) { return std::to_string(c.seed); }}},
      {"output_dir", {[](E& c, const std::string& v) { c.output_dir = v; },
                      [](const E& c) { return c.output_dir; }}},
      {"env.id", {[](E& c, const std::string& v) { c.env.id = envs::parse_env_id(v); },
                  [](const E& c) { return std::string(envs::to_string(c.env.id)); }}},
      {"env.chain_length", integer(&E::env, &envs::EnvSpec::chain_length)},
      {"env.slip", real(&E::env, &envs::EnvSpec::slip)},
      {"env.grid_side", integer(&E::env, &envs::EnvSpec::grid_side)},
      {"env.step_cap", integer(&E::env, &envs::EnvSpec::step_cap)},
      {"env.cartpole.gravity", cart(&envs::CartPoleParams::gravity)},
      {"env.cartpole.cart_mass", cart(&envs::CartPoleParams::cart_mass)},
      {"env.cartpole.pole_mass", cart(&envs::CartPoleParams::pole_mass)},
      {"env.cartpole.half_length", cart(&envs::CartPoleParams::half_length)},
      {"env.cartpole.force", cart(&envs::CartPoleParams::force)},
      {"env.cartpole.dt", cart(&envs::CartPoleParams::dt)},
      {"env.cartpole.x_limit", cart(&envs::CartPoleParams::x_limit)},
      {"env.cartpole.theta_limit_deg", cart(&envs::CartPoleParams::theta_limit_deg)},
      {"model.tier", {[](E& c, const std::string& v) { c.tier = nn::parse_tier(v); },
                      [](const E& c) { return std::string(nn::to_string(c.tier)); }}},
      {"model.high", widths(&nn::TierWidths::high)},
      {"model.medium", widths(&nn::TierWidths::medium)},
      {"model.low", widths(&nn::TierWidths::low)},
      {"ppo.gamma", real(&E::ppo, &ppo::PpoConfig::gamma)},
      {"ppo.lambda", real(&E::ppo, &ppo::PpoConfig::lambda)},
      {"ppo.clip", real(&E::ppo, &ppo::PpoConfig::clip)},
      {"ppo.update_epochs", integer(&E::ppo, &ppo::PpoConfig::update_epochs)},
      {"ppo.minibatch_size", integer(&E::ppo, &ppo::PpoConfig::minibatch_size)},
      {"ppo.num_actors", integer(&E::ppo, &ppo::PpoConfig::num_actors)},
      {"ppo.horizon", integer(&E::ppo, &ppo::PpoConfig::horizon)},
      {"ppo.stepsize", real(&E::ppo, &ppo::PpoConfig::stepsize)},
      {"ppo.value_coef", real(&E::ppo, &ppo::PpoConfig::value_coef)},
      {"ppo.entropy_coef", real(&E::ppo, &ppo::PpoConfig::entropy_coef)},
      {"ppo.total_env_steps", integer(&E::ppo, &ppo::PpoConfig::total_env_steps)},
      {"distill.epochs", integer(&E::distill, &distill::DistillConfig::epochs)},
      {"distill.minibatch_size", integer(&E::distill, &distill::DistillConfig::minibatch_size)},
      {"distill.stepsize", real(&E::distill, &distill::DistillConfig::stepsize)},
      {"distill.temperature", real(&E::distill, &distill::DistillConfig::temperature)},
      {"distill.prob_floor", real(&E::distill, &distill::DistillConfig::prob_floor)},
      {"distill.records", {[](E& c, const std::string& v) { c.replay_records = to_int("", v); },
                           [](const E& c) { return std::to_string(c.replay_records); }}},
      {"finetune.critic_warmup_updates",
       {[](E& c, const std::string& v) { c.finetune_warmup = static_cast<int>(to_int("", v)); },
        [](const E& c) { return std::to_string(c.finetune_warmup); }}},
      {"eval.steps", {[](E& c, const std::string& v) { c.eval_steps = to_int("", v); },
                      [](const E& c) { return std::to_string(c.eval_steps); }}},
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  env.validate();
  ppo.validate();
  distill.validate();
  for (auto tier : {nn::CapacityTier::kHigh, nn::CapacityTier::kMedium, nn::CapacityTier::kLow})
    if (widths.widths(tier).empty())
      fail(ErrorKind::kConfig, std::string("model.") + nn::to_string(tier) + " has no layers");
  if (replay_records < 1) fail(ErrorKind::kConfig, "distill.records must be at least 1");
  if (finetune_warmup < 0)
    fail(ErrorKind::kConfig, "finetune.critic_warmup_updates must be non-negative");
  if (eval_steps < 1) fail(ErrorKind::kConfig, "eval.steps must be at least 1");
  const std::filesystem::path out(output_dir);
  std::error_code ec;
  if (std::filesystem::exists(out, ec)) {
    if (!std::filesystem::is_directory(out, ec))
      fail(ErrorKind::kConfig, "output_dir '" + output_dir + "' is not a directory");
  } else {
    const auto parent = std::filesystem::absolute(out, ec).parent_path();
    if (!std::filesystem::is_directory(parent, ec))
      fail(ErrorKind::kConfig, "output_dir '" + output_dir + "' cannot be created: parent missing");
  }
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  const std::uint64_t h = stream_id(canonical());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    const std::string line = trim(text.substr(start, end - start));
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (!line.empty() && line.front() != '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::kConfig, where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      const auto it = fields().find(key);
      if (it == fields().end()) fail(ErrorKind::kConfig, where + ": unknown key '" + key + "'");
      if (!seen.insert(key).second) fail(ErrorKind::kConfig, where + ": duplicate key '" + key + "'");
      try {
        it->second.set(config, value);
      } catch (const Error& e) {
        fail(ErrorKind::kConfig, where + ": " + key + ": " + e.what());
      }
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_text(path), path.string());
}

}  // namespace distillery
