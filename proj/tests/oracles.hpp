#pragma once

// Brute-force reference computations shared by the unit and acceptance tests.
// Nothing here calls into the library's sd_core routines.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace oracle {

inline double f1(std::span<const double> xs, double eta) {
  double c = 0.0;
  for (double x : xs) c += x <= eta ? 1.0 : 0.0;
  return c / static_cast<double>(xs.size());
}

inline double f2(std::span<const double> xs, double eta) {
  double s = 0.0;
  for (double x : xs) s += std::max(eta - x, 0.0);
  return s / static_cast<double>(xs.size());
}

inline double fk(int k, std::span<const double> xs, double eta) {
  return k == 1 ? f1(xs, eta) : f2(xs, eta);
}

/// Candidate points: a, b, every sample inside [a, b], and `dense` evenly
/// spaced interior points.
inline std::vector<double> dense_grid(std::span<const double> xs,
                                      std::span<const double> ys, double a,
                                      double b, int dense = 1000) {
  std::vector<double> g{a, b};
  for (double x : xs) if (x >= a && x <= b) g.push_back(x);
  for (double y : ys) if (y >= a && y <= b) g.push_back(y);
  for (int i = 1; i < dense; ++i) g.push_back(a + (b - a) * i / dense);
  return g;
}

inline double gap(int k, std::span<const double> xs, std::span<const double> ys,
                  double a, double b, int dense = 1000) {
  double best = -INFINITY;
  for (double eta : dense_grid(xs, ys, a, b, dense)) {
    best = std::max(best, fk(k, xs, eta) - fk(k, ys, eta));
  }
  return best;
}

/// Closed form second-order distribution function of N(mu, sigma^2).
inline double normal_f2(double mu, double sigma, double eta) {
  const double z = (eta - mu) / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return (eta - mu) * cdf + sigma * pdf;
}

/// Batch with continuous values and, when `dup` is set, repeated ones.
inline std::vector<double> mixed_batch(std::mt19937_64& rng, std::size_t n, bool dup) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(-4, 4);
  std::bernoulli_distribution pick(0.5);
  std::vector<double> v(n);
  for (auto& x : v) x = dup && pick(rng) ? 0.25 * coarse(rng) : normal(rng);
  return v;
}

}  // namespace oracle
