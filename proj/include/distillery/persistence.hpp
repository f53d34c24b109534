#ifndef DISTILLERY_PERSISTENCE_HPP_
#define DISTILLERY_PERSISTENCE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "distillery/distill.hpp"
#include "distillery/envs.hpp"
#include "distillery/nn.hpp"

// On-disk formats. All multi-byte integers little-endian.
//
// Checkpoint ("ADCK", version 1):
//   magic[4] | u32 version | u32 len + topology JSON | u32 len + provenance JSON
//   | u64 parameter count | f32 parameters | u32 CRC32 of all preceding bytes
// Parameters follow the network's flat order (body layers, policy head, value
// head; each weights row-major then biases).
//
// Replay buffer ("ADRB", version 1):
//   magic[4] | u32 version | u32 obs_dim | u32 action_count | u64 record_count
//   | u64 global_seed | records (obs_dim f32, action_count f32, u16 action)
//   | u32 len + metadata JSON
namespace distillery::io {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kReplayVersion = 1;

struct Provenance {
  std::string algorithm;  // e.g. "ppo", "distill", "finetune"
  envs::EnvSpec env;
  std::uint64_t seed = 0;
  std::int64_t env_steps = 0;
  std::string config_hash;

  bool operator==(const Provenance&) const = default;
};

struct LoadedCheckpoint {
  nn::ActorCriticNet net;
  Provenance provenance;
};

Bytes encode_checkpoint(const nn::ActorCriticNet& net, const Provenance& provenance);
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                   const std::string& source = "<memory>");
void save_checkpoint(const nn::ActorCriticNet& net, const Provenance& provenance,
                     const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Config error naming both shapes when the network cannot act in `spec`.
void require_compatible(const nn::ActorCriticNet& net, const envs::EnvSpec& spec);

Bytes encode_replay(const distill::ReplayBuffer& buffer);
distill::ReplayBuffer decode_replay(std::span<const std::uint8_t> bytes,
                                    const std::string& source = "<memory>");
void save_replay(const distill::ReplayBuffer& buffer, const std::filesystem::path& path);
distill::ReplayBuffer load_replay(const std::filesystem::path& path);

std::string env_to_json(const envs::EnvSpec& spec);
envs::EnvSpec env_from_json(const std::string& text);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Write to a sibling temporary file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace distillery::io

#endif  // DISTILLERY_PERSISTENCE_HPP_
