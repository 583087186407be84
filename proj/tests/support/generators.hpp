#pragma once

// Seeded value generators for property tests. Each property draws its cases
// from a Gen seeded with a fixed constant, so a failure names a reproducible
// case index.

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace cryomux::test {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Log-uniform over [lo, hi], both positive.
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool coin() { return integer(0, 1) == 1; }
  double normal() { return std::normal_distribution<double>()(engine_); }

  /// Impedance with a non-negative real part: a resistance in series with a
  /// reactance, each spanning many decades, occasionally a pure short.
  std::complex<double> passive_load() {
    if (integer(0, 99) == 0) return {0.0, 0.0};
    const double r = coin() ? log_uniform(1e-3, 1e15) : 0.0;
    const double x = (coin() ? 1.0 : -1.0) * log_uniform(1e-3, 1e15);
    return {r, x};
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cryomux::test
