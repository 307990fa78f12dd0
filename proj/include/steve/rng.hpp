#ifndef STEVE_RNG_HPP
#define STEVE_RNG_HPP

#include <cstdint>
#include <random>

namespace steve {

// Seeded pseudo-random stream. Draws are implemented here rather than through
// the <random> distributions so that streams are reproducible bit-for-bit
// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via the polar method; the spare deviate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream. The parent advances by one draw.
  Rng fork() { return Rng(mix(engine_() ^ 0x9e3779b97f4a7c15ULL)); }

  // Stream derived from (seed, stream id) without consuming any draws.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(mix(seed * 0x9e3779b97f4a7c15ULL + mix(stream_id + 1)));
  }

  bool operator==(const Rng& other) const {
    return seed_ == other.seed_ && engine_ == other.engine_ &&
           has_spare_ == other.has_spare_ && spare_ == other.spare_;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace steve

#endif  // STEVE_RNG_HPP
