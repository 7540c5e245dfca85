#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace splitfhe {

// Seeded generator with platform-independent derived distributions.
// std::*_distribution output is implementation-defined, so every sampler here
// is built directly on the mt19937_64 bit stream.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, bound).
  std::uint64_t uniform_below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Rounded Gaussian, rejected outside six standard deviations.
  std::int64_t discrete_gaussian(double sigma) {
    const double bound = 6.0 * sigma;
    while (true) {
      const double x = normal() * sigma;
      if (std::abs(x) <= bound) return static_cast<std::int64_t>(std::llround(x));
    }
  }

  // Uniform over {-1, 0, 1}.
  int ternary() { return static_cast<int>(uniform_below(3)) - 1; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      const auto j = static_cast<decltype(i)>(uniform_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(first[i], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace splitfhe
