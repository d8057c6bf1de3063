#pragma once

// Deterministic random source. All randomness in the project flows through
// Rng so that runs are reproducible from a single seed, and so that
// parallel work can derive independent substreams by name or index and
// still match a serial run bit for bit. Variate generation is implemented
// here rather than with std::*_distribution because the standard leaves
// those unspecified across library implementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "pairrank/math.hpp"

namespace pairrank {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Substream derivation: mix the master seed with a stream label and index.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  return splitmix64(master ^ splitmix64(fnv1a64(label)) ^
                    splitmix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), n >= 1.
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) %
           n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Inverse-CDF sampling keeps the stream consumption at exactly one
  // draw per variate.
  double normal() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return normal_quantile(u);
  }

  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = std::max(uniform(), 1e-300);
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = std::max(uniform(), 1e-300);
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return d * v;
      }
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // Draw an index from an unnormalized nonnegative weight vector.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  // k distinct integers from [lo, hi], sorted. Partial Fisher-Yates.
  std::vector<int> sample_distinct(int k, int lo, int hi) {
    std::vector<int> pool;
    for (int v = lo; v <= hi; ++v) pool.push_back(v);
    std::vector<int> out;
    for (int i = 0; i < k && !pool.empty(); ++i) {
      const std::size_t j = uniform_index(pool.size());
      out.push_back(pool[j]);
      pool[j] = pool.back();
      pool.pop_back();
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pairrank
