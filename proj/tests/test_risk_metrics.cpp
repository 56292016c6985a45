#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "stochdom/risk_metrics.hpp"
#include "stochdom/sd_core.hpp"

using namespace stochdom;

namespace {

/// Minimum of the perturbed mean by the greedy rule: the floor(n/2) smallest
/// outcomes gain rho/n of mass, the floor(n/2) largest lose it.
double greedy_dro(std::vector<double> xs, double rho) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0 / static_cast<double>(n);
    if (i < n / 2) w += rho / static_cast<double>(n);
    if (i >= n - n / 2) w -= rho / static_cast<double>(n);
    s += w * xs[i];
  }
  return s;
}

}  // namespace

TEST(Mad, Examples) {
  EXPECT_DOUBLE_EQ(mad(std::vector<double>{1, 2, 3}), 2.0 / 3.0);
  EXPECT_EQ(mad(std::vector<double>{4, 4, 4, 4}), 0.0);
  EXPECT_EQ(lower_median(std::vector<double>{4, 1, 3, 2}), 2.0);
  EXPECT_THROW(mad(std::vector<double>{}), std::invalid_argument);
}

TEST(DroValue, Examples) {
  const std::vector<double> xs{1, 2, 3};
  EXPECT_NEAR(dro_value(xs, 0.1), 2.0 - 0.1 * 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(dro_bruteforce(xs, 0.1), 2.0 - 0.1 * 2.0 / 3.0, 1e-15);
  EXPECT_EQ(dro_value(xs, 0.0), mean(xs));
  EXPECT_EQ(dro_value(std::vector<double>{0.5, 0.5}, 0.7), 0.5);
  EXPECT_EQ(dro_bruteforce(std::vector<double>{0.25}, 0.9), 0.25);
  EXPECT_THROW(dro_value(xs, -0.1), std::invalid_argument);
  EXPECT_THROW(dro_value(xs, 1.1), std::invalid_argument);
  EXPECT_THROW(dro_bruteforce(std::vector<double>(13, 0.0), 0.1), std::invalid_argument);
}

TEST(DroValue, LossTableArithmetic) {
  // Losses with mean 0.0283 and MAD 0.0286; outcomes are negated losses.
  const double m = 0.0283, d = 1.5 * 0.0286;
  const std::vector<double> outcomes{-(m - d), -m, -(m + d)};
  EXPECT_NEAR(mad(outcomes), 0.0286, 1e-15);
  EXPECT_NEAR(-dro_value(outcomes, 0.1), 0.0312, 5e-4);
}

TEST(DroValue, MatchesBothOracles) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size(1, 8);
  for (int rep = 0; rep < 500; ++rep) {
    const auto xs = oracle::mixed_batch(rng, static_cast<std::size_t>(size(rng)), rep % 2 == 0);
    for (int r = 1; r <= 19; ++r) {
      const double rho = 0.05 * r;
      const double v = dro_value(xs, rho);
      EXPECT_NEAR(v, dro_bruteforce(xs, rho), 1e-12);
      EXPECT_NEAR(v, greedy_dro(xs, rho), 1e-12);
    }
  }
}

TEST(Semideviation, ExamplesAndMadOrdering) {
  EXPECT_DOUBLE_EQ(semideviation1(std::vector<double>{0, 2}), 0.5);
  EXPECT_EQ(semideviation1(std::vector<double>{3, 3, 3}), 0.0);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 1000; ++rep) {
    const auto xs = oracle::mixed_batch(rng, 1 + rep % 30, rep % 2 == 0);
    EXPECT_LE(mad(xs), 2.0 * semideviation1(xs) + 1e-12);
  }
}

TEST(Semideviation, ConsistentWithSecondOrderDominance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::uniform_real_distribution<double> spread(0.0, 0.4);
  std::uniform_real_distribution<double> shift(0.0, 0.2);
  const Interval iv(-3.0, 3.0);
  int certified = 0;
  for (int rep = 0; rep < 300; ++rep) {
    // Y is X moved down and spread out around each point.
    std::vector<double> xs, ys;
    const double down = rep % 3 == 0 ? 0.0 : shift(rng);
    for (int i = 0; i < 20; ++i) {
      const double x = unif(rng);
      const double d = spread(rng);
      xs.push_back(x);
      xs.push_back(x);
      ys.push_back(x - down - d);
      ys.push_back(x - down + d);
    }
    if (dominance_gap(2, xs, ys, iv).value > 1e-12) continue;
    ++certified;
    EXPECT_GE(mean(xs) - semideviation1(xs), mean(ys) - semideviation1(ys) - 1e-9);
  }
  EXPECT_GE(certified, 200);
}

TEST(Cvar, Examples) {
  EXPECT_DOUBLE_EQ(cvar(std::vector<double>{4, 1, 3, 2}, 0.5), 1.5);
  const std::vector<double> xs{0.3, -1.0, 2.0, 0.1, 5.0};
  EXPECT_DOUBLE_EQ(cvar(xs, 1.0), mean(xs));
  EXPECT_DOUBLE_EQ(cvar(xs, 0.01), -1.0);
  EXPECT_THROW(cvar(xs, 0.0), std::invalid_argument);
  EXPECT_THROW(cvar(xs, 1.5), std::invalid_argument);
}

TEST(Sharpe, TableRatioAndZeroStd) {
  // A two-point batch with mean 0.501 and unbiased variance 7.496.
  const double half = std::sqrt(7.496 / 2.0);
  const std::vector<double> xs{0.501 - half, 0.501 + half};
  EXPECT_NEAR(variance(xs), 7.496, 1e-12);
  EXPECT_NEAR(sharpe(xs), 0.183, 5e-4);
  EXPECT_THROW(sharpe(std::vector<double>{1, 1}), std::invalid_argument);
  EXPECT_EQ(variance(std::vector<double>{2.0}), 0.0);
}

TEST(MetricReport, KeysAndIdentities) {
  std::mt19937_64 rng(4);
  const auto xs = oracle::mixed_batch(rng, 101, true);
  const auto r = metric_report(xs);
  EXPECT_EQ(r.mean, mean(xs));
  EXPECT_GE(r.variance, 0.0);
  EXPECT_NEAR(r.std * r.std, r.variance, 1e-12);
  ASSERT_TRUE(r.sharpe.has_value());
  EXPECT_EQ(r.semidev1, semideviation1(xs));
  for (const char* k : {"cvar_05", "cvar_10", "cvar_25"}) EXPECT_TRUE(r.cvar.count(k)) << k;
  for (double rho : kReportDroRadii) {
    ASSERT_TRUE(r.dro.count(dro_key(rho)));
    EXPECT_NEAR(r.dro.at(dro_key(rho)), r.mean - rho * r.mad, 1e-15);
  }
  EXPECT_EQ(dro_key(0.1), "dro_010");
  EXPECT_EQ(cvar_key(0.05), "cvar_05");
  EXPECT_FALSE(metric_report(std::vector<double>{2, 2}).sharpe.has_value());
}
