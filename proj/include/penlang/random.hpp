#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace penlang {

/// Deterministic random stream used throughout the library.
///
/// Every consumer receives its own stream derived from a master seed and a
/// small integer path, so results do not depend on scheduling or on how many
/// worker threads run an experiment.  The variate algorithms are fixed here
/// (instead of delegating to std::normal_distribution and friends) because
/// the standard distributions are not guaranteed to produce identical
/// sequences across standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(mix(seed)) {}

  /// Derives an independent stream from a master seed and a path of indices,
  /// e.g. {replicate, purpose, filter}.  Path order matters.
  static RandomStream derive(std::uint64_t master,
                             std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix(master);
    for (std::uint64_t p : path) s = mix(s + 0x9e3779b97f4a7c15ULL * (p + 1));
    return RandomStream(s);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform draw on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * pi() * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Gamma(shape, 1) for shape >= 1 (Marsaglia-Tsang squeeze method).
  double gamma(double shape) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  /// Chi-squared with dof degrees of freedom (dof >= 2 assumed upstream).
  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

 private:
  static constexpr double pi() { return 3.141592653589793238462643383279502884; }

  // splitmix64 finalizer; spreads structured seeds over the full state space.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace penlang
