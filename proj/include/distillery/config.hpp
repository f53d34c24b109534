#ifndef DISTILLERY_CONFIG_HPP_
#define DISTILLERY_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "distillery/distill.hpp"
#include "distillery/envs.hpp"
#include "distillery/nn.hpp"
#include "distillery/ppo.hpp"

namespace distillery {

// Flat `key = value` experiment description. Lines starting with '#' are
// comments; keys use dotted section prefixes (ppo.gamma, env.id, ...).
// Unknown or repeated keys are rejected.
struct ExperimentConfig {
  envs::EnvSpec env;
  nn::CapacityTier tier = nn::CapacityTier::kHigh;
  nn::TierWidths widths;
  ppo::PpoConfig ppo;
  distill::DistillConfig distill;
  std::int64_t replay_records = 50'000;
  std::int64_t eval_steps = 50'000;
  int finetune_warmup = 2;
  std::uint64_t seed = 0;
  std::string output_dir = ".";

  void validate() const;
  // Every setting, one `key = value` per line in sorted key order.
  std::string canonical() const;
  // 16 hex digits of FNV-1a over canonical().
  std::string hash() const;
};

ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace distillery

#endif  // DISTILLERY_CONFIG_HPP_
