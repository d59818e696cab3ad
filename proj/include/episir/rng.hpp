#pragma once

#include <cstdint>
#include <random>

namespace episir {

// splitmix64; used to derive independent substream seeds from a master seed
// (per chain, per replicate) so parallel runs stay reproducible.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Wraps mt19937_64. Distribution objects are constructed per call so no
// hidden distribution state leaks between draws; the stream is a pure
// function of the seed and the call sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t master_seed, std::uint64_t stream_id) {
    return Rng(splitmix64(master_seed ^ splitmix64(stream_id)));
  }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double normal(double mean, double sd) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }

  // shape/rate parameterization, mean = shape/rate
  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }

  long long poisson(double mean) {
    return std::poisson_distribution<long long>(mean)(engine_);
  }

  bool bernoulli(double p) {
    return std::bernoulli_distribution(p)(engine_);
  }

  long long binomial(long long n, double p) {
    if (n <= 0) return 0;
    return std::binomial_distribution<long long>(n, p)(engine_);
  }

  std::uint64_t raw() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace episir
