#include "distillery/persistence.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "distillery/errors.hpp"
#include "json.hpp"

namespace distillery::io {
namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[4] = {'A', 'D', 'C', 'K'};
constexpr char kReplayMagic[4] = {'A', 'D', 'R', 'B'};

class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  template <typename T>
  void le(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bytes_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i)));
  }
  void f32(double value) { le(std::bit_cast<std::uint32_t>(static_cast<float>(value))); }
  void string32(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  Bytes take() { return std::move(bytes_); }
  const Bytes& bytes() const { return bytes_; }

 private:
  Bytes bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      fail(ErrorKind::kFormat, source_ + ": truncated file while reading " + what);
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  std::string string32(const char* what) {
    const auto n = le<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic(const char (&expected)[4]) {
    need(4, "magic");
    if (std::memcmp(bytes_.data() + pos_, expected, 4) != 0)
      fail(ErrorKind::kFormat, source_ + ": bad magic bytes, expected '" +
                                   std::string(expected, 4) + "'");
    pos_ += 4;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string source_;
};

json cartpole_json(const envs::CartPoleParams& p) {
  return json{{"gravity", p.gravity},         {"cart_mass", p.cart_mass},
              {"pole_mass", p.pole_mass},     {"half_length", p.half_length},
              {"force", p.force},             {"dt", p.dt},
              {"x_limit", p.x_limit},         {"theta_limit_deg", p.theta_limit_deg}};
}

json env_json(const envs::EnvSpec& s) {
  return json{{"id", envs::to_string(s.id)}, {"chain_length", s.chain_length},
              {"slip", s.slip},              {"grid_side", s.grid_side},
              {"step_cap", s.step_cap},      {"cartpole", cartpole_json(s.cartpole)}};
}

envs::EnvSpec env_from(const json& j) {
  envs::EnvSpec s;
  s.id = envs::parse_env_id(j.at("id").get<std::string>());
  s.chain_length = j.at("chain_length").get<int>();
  s.slip = j.at("slip").get<double>();
  s.grid_side = j.at("grid_side").get<int>();
  s.step_cap = j.at("step_cap").get<int>();
  const json& c = j.at("cartpole");
  s.cartpole.gravity = c.at("gravity").get<double>();
  s.cartpole.cart_mass = c.at("cart_mass").get<double>();
  s.cartpole.pole_mass = c.at("pole_mass").get<double>();
  s.cartpole.half_length = c.at("half_length").get<double>();
  s.cartpole.force = c.at("force").get<double>();
  s.cartpole.dt = c.at("dt").get<double>();
  s.cartpole.x_limit = c.at("x_limit").get<double>();
  s.cartpole.theta_limit_deg = c.at("theta_limit_deg").get<double>();
  s.validate();
  return s;
}

json parse_json(const std::string& text, const std::string& source, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, source + ": malformed " + what + " JSON: " + e.what());
  }
}

template <typename F>
auto with_json_errors(const std::string& source, const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, source + ": invalid " + what + ": " + e.what());
  }
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string env_to_json(const envs::EnvSpec& spec) { return env_json(spec).dump(); }

envs::EnvSpec env_from_json(const std::string& text) {
  const json j = parse_json(text, "<env>", "environment");
  return with_json_errors("<env>", "environment", [&] { return env_from(j); });
}

Bytes encode_checkpoint(const nn::ActorCriticNet& net, const Provenance& provenance) {
  if (!net.all_finite()) fail(ErrorKind::kNumeric, "refusing to save non-finite parameters");
  const nn::Topology& t = net.topology();
  json activations = json::array();
  for (auto a : t.activations) activations.push_back(nn::to_string(a));
  const json topology{{"obs_dim", t.obs_dim},
                      {"action_count", t.action_count},
                      {"hidden", t.hidden},
                      {"activations", activations}};
  const json prov{{"algorithm", provenance.algorithm},
                  {"env", env_json(provenance.env)},
                  {"seed", provenance.seed},
                  {"env_steps", provenance.env_steps},
                  {"config_hash", provenance.config_hash}};

  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  w.string32(topology.dump());
  w.string32(prov.dump());
  const nn::Vector params = net.flat_parameters();
  w.le(static_cast<std::uint64_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) w.f32(params[i]);
  w.le(crc32(w.bytes()));
  return w.take();
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.empty()) fail(ErrorKind::kFormat, source + ": empty checkpoint file");
  ByteReader r(bytes, source);
  r.magic(kCheckpointMagic);
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    fail(ErrorKind::kFormat, source + ": checkpoint version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  // Integrity before interpretation.
  if (bytes.size() < 12) fail(ErrorKind::kFormat, source + ": truncated checkpoint");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (crc32(bytes.first(body)) != stored)
    fail(ErrorKind::kFormat, source + ": checksum mismatch (file corrupted or truncated)");
  const std::string topo_text = r.string32("topology");
  const std::string prov_text = r.string32("provenance");
  const auto count = r.le<std::uint64_t>("parameter count");
  if (r.remaining() < 4 || (r.remaining() - 4) / 4 < count)
    fail(ErrorKind::kFormat, source + ": truncated file while reading parameters");

  const json topo = parse_json(topo_text, source, "topology");
  const json prov = parse_json(prov_text, source, "provenance");
  nn::Topology t = with_json_errors(source, "topology", [&] {
    nn::Topology out;
    out.obs_dim = topo.at("obs_dim").get<int>();
    out.action_count = topo.at("action_count").get<int>();
    out.hidden = topo.at("hidden").get<std::vector<int>>();
    for (const auto& a : topo.at("activations")) out.activations.push_back(nn::parse_activation(a.get<std::string>()));
    return out;
  });
  Provenance p = with_json_errors(source, "provenance", [&] {
    Provenance out;
    out.algorithm = prov.at("algorithm").get<std::string>();
    out.env = env_from(prov.at("env"));
    out.seed = prov.at("seed").get<std::uint64_t>();
    out.env_steps = prov.at("env_steps").get<std::int64_t>();
    out.config_hash = prov.at("config_hash").get<std::string>();
    return out;
  });

  nn::ActorCriticNet net(t);
  if (count != net.parameter_count())
    fail(ErrorKind::kFormat, source + ": payload holds " + std::to_string(count) +
                                 " parameters but topology needs " +
                                 std::to_string(net.parameter_count()));
  nn::Vector params(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = r.f32("parameters");
  if (r.remaining() != 4) fail(ErrorKind::kFormat, source + ": trailing bytes after parameters");
  net.set_flat_parameters(params);
  return {std::move(net), std::move(p)};
}

void save_checkpoint(const nn::ActorCriticNet& net, const Provenance& provenance,
                     const std::filesystem::path& path) {
  const Bytes bytes = encode_checkpoint(net, provenance);
  write_file_atomic(path, bytes);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return decode_checkpoint(bytes, path.string());
}

void require_compatible(const nn::ActorCriticNet& net, const envs::EnvSpec& spec) {
  if (net.obs_dim() != spec.obs_dim() || net.action_count() != spec.action_count())
    fail(ErrorKind::kConfig, "network expects obs_dim=" + std::to_string(net.obs_dim()) +
                                 " actions=" + std::to_string(net.action_count()) +
                                 " but environment " + spec.describe() + " has obs_dim=" +
                                 std::to_string(spec.obs_dim()) +
                                 " actions=" + std::to_string(spec.action_count()));
}

Bytes encode_replay(const distill::ReplayBuffer& buffer) {
  if (buffer.records.empty()) fail(ErrorKind::kConfig, "refusing to save an empty replay buffer");
  buffer.validate();
  if (buffer.action_count > 65535) fail(ErrorKind::kConfig, "too many actions for a u16 action field");

  ByteWriter w;
  w.raw(kReplayMagic, 4);
  w.le(kReplayVersion);
  w.le(static_cast<std::uint32_t>(buffer.obs_dim));
  w.le(static_cast<std::uint32_t>(buffer.action_count));
  w.le(static_cast<std::uint64_t>(buffer.records.size()));
  w.le(static_cast<std::uint64_t>(buffer.metadata.seed));
  for (const auto& rec : buffer.records) {
    for (Eigen::Index i = 0; i < rec.observation.size(); ++i) w.f32(rec.observation[i]);
    for (Eigen::Index i = 0; i < rec.teacher_probs.size(); ++i) w.f32(rec.teacher_probs[i]);
    w.le(static_cast<std::uint16_t>(rec.action));
  }
  const json meta{{"teacher_id", buffer.metadata.teacher_id},
                  {"env", env_json(buffer.metadata.env)},
                  {"timestamp", buffer.metadata.timestamp},
                  {"config_hash", buffer.metadata.config_hash}};
  w.string32(meta.dump());
  return w.take();
}

distill::ReplayBuffer decode_replay(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.empty()) fail(ErrorKind::kFormat, source + ": empty replay file");
  ByteReader r(bytes, source);
  r.magic(kReplayMagic);
  const auto version = r.le<std::uint32_t>("version");
  if (version != kReplayVersion)
    fail(ErrorKind::kFormat, source + ": replay version " + std::to_string(version) +
                                 " is not supported (expected " + std::to_string(kReplayVersion) +
                                 ")");
  distill::ReplayBuffer buffer;
  buffer.obs_dim = static_cast<int>(r.le<std::uint32_t>("obs_dim"));
  buffer.action_count = static_cast<int>(r.le<std::uint32_t>("action_count"));
  const auto count = r.le<std::uint64_t>("record_count");
  buffer.metadata.seed = r.le<std::uint64_t>("global_seed");
  if (buffer.obs_dim < 1 || buffer.action_count < 2)
    fail(ErrorKind::kFormat, source + ": invalid replay dimensions");

  const std::uint64_t record_bytes =
      4ULL * static_cast<std::uint64_t>(buffer.obs_dim + buffer.action_count) + 2ULL;
  if (r.remaining() / record_bytes < count)
    fail(ErrorKind::kFormat, source + ": truncated file: header declares " + std::to_string(count) +
                                 " records");
  buffer.records.resize(static_cast<std::size_t>(count));
  for (auto& rec : buffer.records) {
    rec.observation.resize(buffer.obs_dim);
    rec.teacher_probs.resize(buffer.action_count);
    for (Eigen::Index i = 0; i < buffer.obs_dim; ++i) rec.observation[i] = r.f32("observation");
    for (Eigen::Index i = 0; i < buffer.action_count; ++i) rec.teacher_probs[i] = r.f32("probabilities");
    rec.action = r.le<std::uint16_t>("action");
  }
  const std::string meta_text = r.string32("metadata");
  if (r.remaining() != 0) fail(ErrorKind::kFormat, source + ": trailing bytes after metadata");
  const json meta = parse_json(meta_text, source, "metadata");
  with_json_errors(source, "metadata", [&] {
    buffer.metadata.teacher_id = meta.at("teacher_id").get<std::string>();
    buffer.metadata.env = env_from(meta.at("env"));
    buffer.metadata.timestamp = meta.at("timestamp").get<std::string>();
    buffer.metadata.config_hash = meta.value("config_hash", std::string{});
    return 0;
  });
  try {
    buffer.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, source + ": " + e.what());
  }
  return buffer;
}

void save_replay(const distill::ReplayBuffer& buffer, const std::filesystem::path& path) {
  const Bytes bytes = encode_replay(buffer);
  write_file_atomic(path, bytes);
}

distill::ReplayBuffer load_replay(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return decode_replay(bytes, path.string());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::kIo, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::kIo, "cannot move " + tmp.string() + " to " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::kIo, "failed reading " + path.string());
  return bytes;
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace distillery::io
