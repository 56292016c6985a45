#pragma once

// Sample risk measures. Outcomes are gains: CVaR looks at the lower tail.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stochdom {

double mean(std::span<const double> xs);
/// Unbiased sample variance; 0 for a single sample.
double variance(std::span<const double> xs);
/// Lower-middle order statistic for even n.
double lower_median(std::span<const double> xs);

/// (1/n) sum |x_i - median|.
double mad(std::span<const double> xs);

/// Worst-case mean over the l_inf ball of radius rho/n around the empirical
/// distribution, in closed form: mean - rho * mad. Requires 0 <= rho <= 1.
double dro_value(std::span<const double> xs, double rho);

/// Same quantity by enumerating every perturbation vertex: floor(n/2)
/// coordinates at +rho/n, floor(n/2) at -rho/n, the rest at 0. n <= 12.
double dro_bruteforce(std::span<const double> xs, double rho);
inline constexpr std::size_t kDroBruteforceMaxN = 12;

/// (1/2) mean |x - mean(x)|.
double semideviation1(std::span<const double> xs);

/// Mean of the ceil(alpha * n) smallest outcomes, alpha in (0, 1].
double cvar(std::span<const double> xs, double alpha);

/// mean / std with zero risk-free rate. Throws when std == 0.
double sharpe(std::span<const double> xs);

struct MetricReport {
  double mean = 0.0;
  double variance = 0.0;
  double std = 0.0;
  std::optional<double> sharpe;  // empty when std == 0
  double mad = 0.0;
  double semidev1 = 0.0;
  std::map<std::string, double> cvar;  // "cvar_05" -> value
  std::map<std::string, double> dro;   // "dro_010" -> value
};

inline const std::vector<double> kReportCvarLevels{0.05, 0.10, 0.25};
inline const std::vector<double> kReportDroRadii{0.05, 0.10, 0.25, 0.50};

MetricReport metric_report(std::span<const double> xs);

/// "cvar_05" for 0.05, "dro_010" for 0.10.
std::string cvar_key(double alpha);
std::string dro_key(double rho);

}  // namespace stochdom
