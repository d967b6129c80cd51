#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "fairtranslate/common.hpp"

namespace fairtranslate {

// Deterministic random stream. All data-pipeline and training randomness flows
// through these streams so that runs are reproducible and resumable; the raw
// engine is std::mt19937_64 but value derivation (uniforms, ints, bernoulli)
// is done from raw 64-bit draws so results do not depend on the standard
// library's unspecified distribution algorithms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // splitmix64 step, used to derive per-record seeds from (seed, index).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps the mapping unbiased.
  int uniform_int(int n) {
    if (n <= 0) throw ValidationError("uniform_int", "n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<int>(r % un);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw FormatError("invalid rng state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fairtranslate
