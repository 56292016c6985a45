#include "stochdom/risk_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace stochdom {

namespace {

void require_nonempty(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("empty batch");
}

void require_rho(double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("rho must lie in [0, 1]");
  }
}

}  // namespace

double mean(std::span<const double> xs) {
  require_nonempty(xs);
  return std::accumulate(xs.begin(), xs.end(), 0.0) /
         static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  const double m = mean(xs);
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

double lower_median(std::span<const double> xs) {
  require_nonempty(xs);
  std::vector<double> v(xs.begin(), xs.end());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double mad(std::span<const double> xs) {
  const double med = lower_median(xs);
  double total = 0.0;
  for (double x : xs) total += std::abs(x - med);
  return total / static_cast<double>(xs.size());
}

double dro_value(std::span<const double> xs, double rho) {
  require_rho(rho);
  return mean(xs) - rho * mad(xs);
}

double dro_bruteforce(std::span<const double> xs, double rho) {
  require_nonempty(xs);
  require_rho(rho);
  const std::size_t n = xs.size();
  if (n > kDroBruteforceMaxN) {
    throw std::invalid_argument("dro_bruteforce supports n <= 12");
  }
  const std::size_t half = n / 2;
  const double step = rho / static_cast<double>(n);
  const double base = mean(xs);

  // Each coordinate is 0, +1 or -1 (times rho/n); walk all 3^n codes.
  std::size_t codes = 1;
  for (std::size_t i = 0; i < n; ++i) codes *= 3;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < codes; ++code) {
    std::size_t plus = 0;
    std::size_t minus = 0;
    double shift = 0.0;
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i, c /= 3) {
      const std::size_t digit = c % 3;
      if (digit == 1) {
        ++plus;
        shift += xs[i];
      } else if (digit == 2) {
        ++minus;
        shift -= xs[i];
      }
    }
    if (plus != half || minus != half) continue;
    best = std::min(best, base + step * shift);
  }
  return best;
}

double semideviation1(std::span<const double> xs) {
  const double m = mean(xs);
  double total = 0.0;
  for (double x : xs) total += std::abs(x - m);
  return 0.5 * total / static_cast<double>(xs.size());
}

double cvar(std::span<const double> xs, double alpha) {
  require_nonempty(xs);
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("cvar alpha must lie in (0, 1]");
  }
  const auto n = xs.size();
  auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<double> v(xs.begin(), xs.end());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k),
                    v.end());
  return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k),
                         0.0) /
         static_cast<double>(k);
}

double sharpe(std::span<const double> xs) {
  const double sd = std::sqrt(variance(xs));
  if (sd == 0.0) throw std::invalid_argument("sharpe undefined for zero std");
  return mean(xs) / sd;
}

std::string cvar_key(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cvar_%02d",
                static_cast<int>(std::lround(alpha * 100.0)));
  return buf;
}

std::string dro_key(double rho) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dro_%03d",
                static_cast<int>(std::lround(rho * 100.0)));
  return buf;
}

MetricReport metric_report(std::span<const double> xs) {
  MetricReport r;
  r.mean = mean(xs);
  r.variance = variance(xs);
  r.std = std::sqrt(r.variance);
  if (r.std > 0.0) r.sharpe = r.mean / r.std;
  r.mad = mad(xs);
  r.semidev1 = semideviation1(xs);
  for (double a : kReportCvarLevels) r.cvar[cvar_key(a)] = cvar(xs, a);
  for (double rho : kReportDroRadii) r.dro[dro_key(rho)] = r.mean - rho * r.mad;
  return r;
}

}  // namespace stochdom
