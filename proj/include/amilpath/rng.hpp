#pragma once
// Seeded RNG helpers. All stochastic components draw through these so a
// run is reproducible from a single seed. Distribution sampling is written
// out explicitly (not std::*_distribution) so sequences do not depend on
// the standard library implementation.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "amilpath/common.hpp"

namespace amilpath {

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return (gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is irrelevant at
  // the ranges used here, but keep it exact anyway.
  uint64_t below(uint64_t n) {
    require(n > 0, "Rng::below: empty range");
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= lim);
    return x % n;
  }

  int64_t range(int64_t lo, int64_t hi_inclusive) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Standard normal via Box-Muller, no state cache.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Poisson by inversion for small lambda, normal approximation above.
  int64_t poisson(double lambda) {
    require(lambda >= 0.0, "Rng::poisson: negative lambda");
    if (lambda == 0.0) return 0;
    if (lambda < 30.0) {
      double l = std::exp(-lambda), p = 1.0;
      int64_t k = 0;
      do {
        ++k;
        p *= uniform();
      } while (p > l);
      return k - 1;
    }
    double x = std::round(normal(lambda, std::sqrt(lambda)));
    return x < 0 ? 0 : static_cast<int64_t>(x);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child stream; used to give each slide its own
  // generator regardless of processing order.
  Rng child(uint64_t stream_id) const {
    return Rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace amilpath
