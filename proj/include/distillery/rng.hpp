#ifndef DISTILLERY_RNG_HPP_
#define DISTILLERY_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace distillery {

// Counter-based generator keyed by (seed, stream). The i-th draw depends only
// on the key and i, so independent streams never interact and results do not
// depend on the order in which streams are consumed. Distributions are
// implemented here rather than via <random> so output is identical across
// standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // A new independent stream derived from this generator's key.
  Rng substream(std::uint64_t id) const;
  Rng substream(std::string_view name) const;

  std::uint64_t counter() const { return counter_; }

 private:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Stable 64-bit identifier for a named sub-stream (FNV-1a).
std::uint64_t stream_id(std::string_view name);

// Index i with probability probs[i]. Entries must be non-negative.
std::size_t sample_categorical(std::span<const double> probs, Rng& rng);

void shuffle(std::vector<std::size_t>& items, Rng& rng);

}  // namespace distillery

#endif  // DISTILLERY_RNG_HPP_
