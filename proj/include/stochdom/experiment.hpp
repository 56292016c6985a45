#pragma once

// Config-driven experiment runner and the two-sample comparison tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stochdom/envs.hpp"
#include "stochdom/models.hpp"
#include "stochdom/optimizers.hpp"
#include "stochdom/risk_metrics.hpp"

namespace stochdom {

/// Malformed or inconsistent configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigVersion = 1;

enum class ExperimentKind { Portfolio, CliffWalk, Supervised, Compare };
std::string to_string(ExperimentKind kind);

struct MethodSpec {
  std::string name;             // lsd, sgd, mean_variance, cvar_pg, reinforce
  std::optional<double> param;  // lambda or alpha
  /// File-name form, e.g. "lsd" or "mean_variance-0.5".
  std::string label() const;
};

struct CompareSpec {
  std::string x_file;
  std::string y_file;
  double a = 0.0;
  double b = 1.0;
  int k = 2;
  double tol = 0.02;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  ExperimentKind kind = ExperimentKind::Portfolio;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  LsdConfig lsd;
  SgdConfig baseline;

  MarketSpec market;                       // portfolio
  std::optional<std::uint64_t> market_seed;  // unset: the run seed
  SimplexMap simplex = SimplexMap::Softmax;
  CliffSpec cliff;                         // cliffwalk
  SupervisedSpec supervised;               // supervised
  std::optional<std::uint64_t> supervised_seed;
  std::string dataset_file;
  CompareSpec compare;                     // compare

  std::size_t eval_batch = 0;  // 0 means 10 * lsd.batch
  int hist_bins = 50;
  bool probe = false;
  ProbeConfig probe_config;
  std::size_t rollout_episodes = 100;
  std::string output_dir = "out";

  std::size_t eval_size() const {
    return eval_batch ? eval_batch : 10 * lsd.batch;
  }
};

/// Strict parse: unknown keys and type errors raise ConfigError with the
/// offending line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration (defaults filled in) as pretty JSON.
std::string dump_config(const ExperimentConfig& config);

/// STOCHDOM_SEED_OFFSET, or 0 when unset. Throws ConfigError when malformed.
std::int64_t seed_offset_from_env();

struct RunResult {
  MethodSpec method;
  std::uint64_t seed = 0;
  ParamVector theta;
  std::vector<double> eval;  // held-out outcomes at theta
  std::optional<LsdTrace> lsd_trace;
  std::vector<StepRecord> steps;
  std::optional<ProbeReport> probe;
  std::vector<Trajectory> episodes;  // first rollout_episodes eval episodes
};

/// One (method, seed) fit plus held-out evaluation. The seed is used as is.
RunResult execute_run(const ExperimentConfig& config, const MethodSpec& method,
                      std::uint64_t seed);

std::string metrics_json(const ExperimentConfig& config, const RunResult& run);

/// Risk-neutral method that F2 curves are drawn against.
std::string baseline_method(ExperimentKind kind);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  int jobs = 1;
  std::ostream* log = nullptr;
};

/// Runs every (method, seed) pair and writes all outputs. Throws ConfigError
/// or std::runtime_error naming the failing run.
void run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Writes `content` to a sibling temp file and renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// Raw histogram CSV `bin_left,bin_right,count`.
std::string histogram_csv(std::span<const double> values, int bins);

/// CSV `eta,f2_method,f2_baseline` on the merged grid of both batches.
std::string f2_curve_csv(std::span<const double> method,
                         std::span<const double> baseline,
                         const Interval& interval);

// ---------------------------------------------------------------------------

/// One real per line; blank lines are skipped. Parse failures raise
/// ConfigError naming the line.
std::vector<double> read_samples(std::istream& in, const std::string& name);

struct CompareReport {
  int k = 2;
  Interval interval{0.0, 1.0};
  double tol = 0.0;
  double gap_xy = 0.0;  // Omega_k(X, Y)
  double gap_yx = 0.0;
  std::vector<double> argmax_xy;
  std::vector<double> argmax_yx;
  std::string verdict;  // X-dominates, Y-dominates, incomparable, indistinguishable
};

CompareReport compare_samples(std::span<const double> xs,
                              std::span<const double> ys,
                              const Interval& interval, int k, double tol);
std::string compare_report_json(const CompareReport& report);
void print_compare_report(std::ostream& out, const CompareReport& report);

}  // namespace stochdom
