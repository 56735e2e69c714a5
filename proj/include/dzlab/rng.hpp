#pragma once

#include <array>
#include <cstdint>

namespace dzlab {

// xoshiro256** seeded through splitmix64. All draws are defined from the
// integer state alone so that a seed reproduces across platforms and ports.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for (seed, stream) pairs, e.g. one per episode.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the spare value is not cached.
  double normal();
  bool bernoulli(double p);

 private:
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace dzlab
