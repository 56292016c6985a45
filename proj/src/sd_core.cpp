#include "stochdom/sd_core.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iterator>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace stochdom {

namespace {

void require_nonempty(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
}

std::vector<double> sorted_copy(std::span<const double> samples) {
  std::vector<double> out(samples.begin(), samples.end());
  std::sort(out.begin(), out.end());
  return out;
}

// Right-continuous CDF of a sorted batch on a sorted grid, from integer
// counts so that the last value is exactly 1.
std::vector<double> sweep_f1(const std::vector<double>& sorted,
                             const std::vector<double>& grid) {
  std::vector<double> f1(grid.size());
  const double n = static_cast<double>(sorted.size());
  std::size_t count = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    while (count < sorted.size() && sorted[count] <= grid[i]) ++count;
    f1[i] = static_cast<double>(count) / n;
  }
  return f1;
}

std::vector<double> integrate_f1(const std::vector<double>& f1,
                                 const std::vector<double>& grid) {
  std::vector<double> f2(grid.size(), 0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    f2[i] = f2[i - 1] + (grid[i] - grid[i - 1]) * f1[i - 1];
  }
  return f2;
}

}  // namespace

Interval::Interval(double a, double b) : a_(a), b_(b) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(a < b)) {
    throw std::invalid_argument("interval requires finite a < b");
  }
}

double empirical_f1(std::span<const double> samples, double eta) {
  require_nonempty(samples);
  const auto count = std::count_if(samples.begin(), samples.end(),
                                   [eta](double x) { return x <= eta; });
  return static_cast<double>(count) / static_cast<double>(samples.size());
}

double empirical_f2(std::span<const double> samples, double eta) {
  require_nonempty(samples);
  double total = 0.0;
  for (double x : samples) total += std::max(eta - x, 0.0);
  return total / static_cast<double>(samples.size());
}

EmpiricalCdf build_empirical_cdf(std::span<const double> xs,
                                 std::span<const double> ys,
                                 const Interval& interval) {
  require_nonempty(xs);
  require_nonempty(ys);
  const auto sx = sorted_copy(xs);
  const auto sy = sorted_copy(ys);

  EmpiricalCdf cdf;
  cdf.interval = interval;
  cdf.grid.reserve(sx.size() + sy.size() + 2);
  std::merge(sx.begin(), sx.end(), sy.begin(), sy.end(),
             std::back_inserter(cdf.grid));
  cdf.grid.push_back(interval.a());
  cdf.grid.push_back(interval.b());
  std::sort(cdf.grid.begin(), cdf.grid.end());
  cdf.grid.erase(std::unique(cdf.grid.begin(), cdf.grid.end()),
                 cdf.grid.end());

  cdf.f1_x = sweep_f1(sx, cdf.grid);
  cdf.f1_y = sweep_f1(sy, cdf.grid);
  cdf.f2_x = integrate_f1(cdf.f1_x, cdf.grid);
  cdf.f2_y = integrate_f1(cdf.f1_y, cdf.grid);
  return cdf;
}

DominanceGap dominance_gap(int k, const EmpiricalCdf& cdf) {
  if (k != 1 && k != 2) {
    throw std::invalid_argument("dominance order must be 1 or 2");
  }
  const auto& fx = (k == 1) ? cdf.f1_x : cdf.f2_x;
  const auto& fy = (k == 1) ? cdf.f1_y : cdf.f2_y;
  const Interval& iv = cdf.interval;

  DominanceGap gap;
  gap.mu_star.assign(cdf.size(), 0.0);

  double best = -std::numeric_limits<double>::infinity();
  std::size_t b_index = 0;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    if (!iv.contains(cdf.grid[i])) continue;
    best = std::max(best, fx[i] - fy[i]);
    if (cdf.grid[i] == iv.b()) b_index = i;
  }
  gap.value = best;

  // No sample of either batch at or below b: both functions vanish on [a,b].
  if (cdf.f1_x[b_index] == 0.0 && cdf.f1_y[b_index] == 0.0) {
    gap.degenerate = true;
    gap.maximizers = {b_index};
  } else {
    for (std::size_t i = 0; i < cdf.size(); ++i) {
      if (iv.contains(cdf.grid[i]) &&
          fx[i] - fy[i] >= best - kArgmaxTolerance) {
        gap.maximizers.push_back(i);
      }
    }
  }

  const double w = 1.0 / static_cast<double>(gap.maximizers.size());
  for (std::size_t i : gap.maximizers) {
    gap.mu_star[i] = w;
    gap.argmax_eta.push_back(cdf.grid[i]);
  }
  return gap;
}

DominanceGap dominance_gap(int k, std::span<const double> xs,
                           std::span<const double> ys,
                           const Interval& interval) {
  return dominance_gap(k, build_empirical_cdf(xs, ys, interval));
}

std::pair<PiecewiseUtility, DominanceGap> solve_utility(
    std::span<const double> xs, std::span<const double> ys,
    const Interval& interval) {
  auto cdf = build_empirical_cdf(xs, ys, interval);
  auto gap = dominance_gap(2, cdf);
  auto u = PiecewiseUtility::from_measure(std::move(cdf.grid), gap.mu_star);
  return {std::move(u), std::move(gap)};
}

PiecewiseUtility PiecewiseUtility::from_measure(std::vector<double> knots,
                                                std::vector<double> mass) {
  if (knots.size() != mass.size()) {
    throw std::invalid_argument("utility knots and mass differ in length");
  }
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (!std::isfinite(knots[i]) || !(mass[i] >= 0.0)) {
      throw std::invalid_argument("utility measure must be finite, >= 0");
    }
    if (i > 0 && !(knots[i - 1] < knots[i])) {
      throw std::invalid_argument("utility knots must be strictly increasing");
    }
  }

  PiecewiseUtility u;
  const std::size_t m = knots.size();
  u.cum_slope_.assign(m, 0.0);
  u.values_.assign(m, 0.0);

  // u1 is the (negated) derivative just left of a knot, u2 the value.
  double u1_next = 0.0;
  for (std::size_t j = m; j-- > 0;) {
    if (j + 1 < m) {
      u.values_[j] = u.values_[j + 1] + (knots[j + 1] - knots[j]) * u1_next;
    }
    u.cum_slope_[j] = -u1_next;
    u1_next -= mass[j];
  }
  u.total_mass_ = -u1_next;
  u.knots_ = std::move(knots);
  u.mass_ = std::move(mass);
  return u;
}

double PiecewiseUtility::eval(double x) const {
  if (knots_.empty() || x >= knots_.back()) return 0.0;
  if (x < knots_.front()) {
    return values_.front() - total_mass_ * (knots_.front() - x);
  }
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
  const auto i = static_cast<std::size_t>(it - knots_.begin()) - 1;
  return values_[i] + cum_slope_[i] * (x - knots_[i]);
}

double PiecewiseUtility::deriv(double x) const {
  if (knots_.empty() || x >= knots_.back()) return 0.0;
  if (x < knots_.front()) return total_mass_;
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
  return cum_slope_[static_cast<std::size_t>(it - knots_.begin()) - 1];
}

double l_hat(const PiecewiseUtility& u, std::span<const double> xs,
             std::span<const double> ys) {
  require_nonempty(xs);
  require_nonempty(ys);
  double sx = 0.0;
  double sy = 0.0;
  for (double x : xs) sx += u.eval(x);
  for (double y : ys) sy += u.eval(y);
  return -sx / static_cast<double>(xs.size()) +
         sy / static_cast<double>(ys.size());
}

void write_curve_csv(std::ostream& out, const EmpiricalCdf& cdf) {
  const auto old_precision = out.precision();
  out << "eta,f1_x,f1_y,f2_x,f2_y\n" << std::setprecision(17);
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    out << cdf.grid[i] << ',' << cdf.f1_x[i] << ',' << cdf.f1_y[i] << ','
        << cdf.f2_x[i] << ',' << cdf.f2_y[i] << '\n';
  }
  out.precision(old_precision);
}

}  // namespace stochdom
