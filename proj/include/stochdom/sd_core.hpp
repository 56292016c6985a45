#pragma once

// Empirical k-th order distribution functions, the generalized dominance gap
// over an interval, and the exact second-order utility solver.
//
// Conventions: outcomes are "larger is better". For a sample batch x_1..x_N
//   F1(eta) = #{x_i <= eta} / N              (right-continuous)
//   F2(eta) = (1/N) sum_i (eta - x_i)_+
// and the gap of X against Y on [a,b] is
//   Omega_k(X, Y) = max_{eta in [a,b]} F_X^k(eta) - F_Y^k(eta).
// Omega_k(X, Y) <= 0 means X is not worse than Y anywhere on [a,b].

#include <cstddef>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace stochdom {

/// Closed interval [a, b] with finite a < b.
class Interval {
 public:
  Interval(double a, double b);

  double a() const { return a_; }
  double b() const { return b_; }
  double width() const { return b_ - a_; }
  bool contains(double eta) const { return eta >= a_ && eta <= b_; }

 private:
  double a_;
  double b_;
};

/// Merged sorted grid of two sample batches plus the interval endpoints,
/// with F1 and F2 of each batch evaluated at every grid point.
struct EmpiricalCdf {
  std::vector<double> grid;
  std::vector<double> f1_x, f1_y;
  std::vector<double> f2_x, f2_y;
  Interval interval{0.0, 1.0};

  std::size_t size() const { return grid.size(); }
};

/// Value of the empirical gap and the maximizing measure mu* on the grid.
struct DominanceGap {
  double value = 0.0;
  /// Grid indices (into the EmpiricalCdf grid) of every maximizer in [a,b].
  std::vector<std::size_t> maximizers;
  /// Probability weights on the grid, supported on `maximizers`.
  std::vector<double> mu_star;
  /// Grid values at the maximizers, for reporting.
  std::vector<double> argmax_eta;
  /// Set when every sample of both batches lies above b; mu* is then delta_b.
  bool degenerate = false;
};

/// Second-order utility u(x) = -sum_j mass_j (knot_j - x)_+.
///
/// Nondecreasing, concave, u <= 0 everywhere and u == 0 above the top knot.
/// `cum_slope[i]` is the slope of u on [knot_i, knot_{i+1}), i.e. the total
/// mass strictly above knot_i; `values[i]` is u(knot_i).
class PiecewiseUtility {
 public:
  PiecewiseUtility() = default;

  /// Builds u from a measure on sorted knots via the backward recursion.
  static PiecewiseUtility from_measure(std::vector<double> knots,
                                       std::vector<double> mass);

  double operator()(double x) const { return eval(x); }
  double eval(double x) const;
  /// Right derivative: sum_j mass_j * 1{knot_j > x}.
  double deriv(double x) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& mass() const { return mass_; }
  const std::vector<double>& cum_slope() const { return cum_slope_; }
  const std::vector<double>& values() const { return values_; }
  double total_mass() const { return total_mass_; }
  bool empty() const { return knots_.empty(); }

 private:
  std::vector<double> knots_;
  std::vector<double> mass_;
  std::vector<double> cum_slope_;
  std::vector<double> values_;
  double total_mass_ = 0.0;
};

/// Absolute tolerance used to collect grid maximizers of the gap.
inline constexpr double kArgmaxTolerance = 1e-12;

double empirical_f1(std::span<const double> samples, double eta);
double empirical_f2(std::span<const double> samples, double eta);

EmpiricalCdf build_empirical_cdf(std::span<const double> xs,
                                 std::span<const double> ys,
                                 const Interval& interval);

/// Gap of an already built cdf. k must be 1 or 2.
DominanceGap dominance_gap(int k, const EmpiricalCdf& cdf);
DominanceGap dominance_gap(int k, std::span<const double> xs,
                           std::span<const double> ys,
                           const Interval& interval);

/// argmax over U_2 of the empirical L(X, Y, u), with the attained gap.
std::pair<PiecewiseUtility, DominanceGap> solve_utility(
    std::span<const double> xs, std::span<const double> ys,
    const Interval& interval);

inline double utility_eval(const PiecewiseUtility& u, double x) {
  return u.eval(x);
}
inline double utility_deriv(const PiecewiseUtility& u, double x) {
  return u.deriv(x);
}

/// -mean(u(xs)) + mean(u(ys)).
double l_hat(const PiecewiseUtility& u, std::span<const double> xs,
             std::span<const double> ys);

/// CSV with header `eta,f1_x,f1_y,f2_x,f2_y`, 17 significant digits.
void write_curve_csv(std::ostream& out, const EmpiricalCdf& cdf);

}  // namespace stochdom
