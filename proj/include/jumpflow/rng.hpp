#pragma once

// Deterministic multi-stream RNG. Every Monte Carlo path gets its own stream
// derived from (master seed, path index) by SplitMix64 mixing, so results are
// independent of thread count and scheduling. Distributions are hand-rolled
// for bit-for-bit portability across platforms and library versions.

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace jumpflow::rng {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += kGolden);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// xoshiro256++ core seeded through SplitMix64.
class Stream {
 public:
  Stream() : Stream(0, 0) {}

  Stream(std::uint64_t master_seed, std::uint64_t stream_index) {
    // Decorrelate streams: fold the index through one mixing round before
    // chaining the state words.
    std::uint64_t ix = stream_index;
    std::uint64_t seed = master_seed ^ splitmix64(ix);
    for (auto& w : s_) w = splitmix64(seed);
    have_gauss_ = false;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0,1): 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0,1]; safe under log().
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with the usual cached second variate.
  double gaussian() {
    if (have_gauss_) {
      have_gauss_ = false;
      return gauss_cache_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    gauss_cache_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

  double exponential() { return -std::log(uniform_pos()); }

  // Counting via summed exponentials: exact, O(mean). Callers bound the mean
  // before asking (see engine max_events).
  std::uint64_t poisson(double mean) {
    if (!(mean >= 0.0)) throw std::invalid_argument("poisson mean < 0");
    if (mean == 0.0) return 0;
    std::uint64_t k = 0;
    double acc = exponential();
    while (acc <= mean) {
      ++k;
      acc += exponential();
    }
    return k;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  bool have_gauss_;
  double gauss_cache_ = 0.0;
};

}  // namespace jumpflow::rng
