#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace topodef {

/// One step of the splitmix64 generator; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent seed from `base` and a path of integers
/// (batch index, episode index, stream id, ...). Pure and platform-stable.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

/// Seeded random stream. Conversions to doubles and bounded integers are done
/// here rather than through <random> distributions, whose output is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// True with probability p. Degenerate p (<= 0 or >= 1) consumes no draw.
  bool bernoulli(double p);

  bool operator==(const Rng&) const = default;

 private:
  std::mt19937_64 engine_;
};

}  // namespace topodef
