#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace megan {

/// Deterministic 64-bit splitmix PRNG. Every stochastic component of the
/// pipeline draws from one of these so that runs are reproducible bit-for-bit
/// from a single seed, independent of the C++ standard library in use.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derives an independent child stream. The tag keeps streams for
  /// different purposes decorrelated even when they share a master seed.
  Rng child(std::uint64_t tag) const {
    Rng mix(state_ ^ (0x632be59bd9b4e019ULL * (tag + 1)));
    return Rng(mix.next_u64());
  }

  // Exact state capture, used by resumable training checkpoints.
  struct State {
    std::uint64_t state = 0;
    bool has_spare = false;
    double spare = 0.0;
  };
  State save() const { return {state_, has_spare_, spare_}; }
  void restore(const State& s) {
    state_ = s.state;
    has_spare_ = s.has_spare;
    spare_ = s.spare;
  }

 private:
  std::uint64_t state_ = 0x853c49e6748fea9bULL;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace megan
