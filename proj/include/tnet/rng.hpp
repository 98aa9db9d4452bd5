#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "tnet/error.hpp"
#include "tnet/tensor.hpp"

namespace tnet {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ seeded through splitmix64. Fixed algorithm so streams are
// reproducible across platforms for the same seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi))
      fail(ErrorCategory::argument, "uniform needs lo < hi");
    return lo + (hi - lo) * uniform01();
  }

  // Box-Muller transform; consumes exactly two uniform draws per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (!(stddev >= 0.0))
      fail(ErrorCategory::argument, "normal needs stddev >= 0");
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::size_t below(std::size_t n) {
    if (n == 0) fail(ErrorCategory::argument, "below needs n > 0");
    std::size_t r = std::size_t(uniform01() * double(n));
    return r < n ? r : n - 1;
  }

  // Derives an independent stream seed from a base seed and an index.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t state = seed ^ (0x9e3779b97f4a7c15ULL + index * 0xd1b54a32d192ed03ULL);
    std::uint64_t a = splitmix64(state);
    std::uint64_t b = splitmix64(state);
    return a ^ rotl(b, 32);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

// Glorot uniform draw: bound sqrt(6 / (fan_in + fan_out)), row-major fill.
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out,
                             std::vector<std::size_t> shape, Rng& rng) {
  if (fan_in == 0 || fan_out == 0)
    fail(ErrorCategory::argument, "glorot_uniform needs nonzero fan_in and fan_out");
  Tensor t = Tensor::zeros(std::move(shape));
  double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return glorot_uniform(fan_in, fan_out, {fan_in, fan_out}, rng);
}

}  // namespace tnet
