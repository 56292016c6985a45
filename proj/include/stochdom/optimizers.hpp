#pragma once

// The LSD nested-loop optimizer, its policy-gradient form, and baselines
// (SGD on the mean, mean-variance, REINFORCE, CVaR policy gradient).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochdom/models.hpp"
#include "stochdom/sd_core.hpp"

namespace stochdom {

struct StepSchedule {
  enum class Kind { InvSqrt, Constant };
  double scale = 0.1;
  Kind kind = Kind::InvSqrt;

  /// scale / sqrt(t + 1), or scale for Constant.
  double at(long t) const;
};

/// How [a, b] is chosen when LsdConfig::interval is unset. Both rules use a
/// pooled batch of 2N outcomes at the initial parameters and freeze the
/// result for the whole run.
///   Moments: [m - kappa * s, m + kappa * s] (sample mean m, sample std s)
///   Range:   [min - 0.1 * range, max + 0.1 * range]
enum class IntervalRule { Moments, Range };

struct LsdConfig {
  int order = 2;
  std::optional<Interval> interval;
  IntervalRule interval_rule = IntervalRule::Moments;
  double interval_kappa = 0.5;
  double epsilon = 0.05;
  std::size_t batch = 256;
  std::optional<long> t_max;      // default ceil(4 C / epsilon + 1)
  std::optional<double> c_bound;  // default F2 of the pooled batch at b
  long tbar_max = 200;
  double step_scale = 0.1;
  bool replay = false;
  std::size_t replay_capacity = 0;  // 0 means 4 * batch
  bool score_baseline = false;      // LSD-PG only
  std::uint64_t seed = 0;
};

void validate_lsd_config(const LsdConfig& config);

struct TraceRecord {
  long t = 0;
  long tbar = 0;
  double gap_check = 0.0;  // fresh-batch gap of the stepped iterate vs reference
  double step = 0.0;
  double grad_norm = 0.0;
  bool accepted = false;
};

enum class Termination { Certified, BudgetExhausted, Aborted };
std::string to_string(Termination reason);

struct LsdTrace {
  std::vector<TraceRecord> records;
  std::vector<std::size_t> updates;  // indices into records
  Termination reason = Termination::BudgetExhausted;
  Interval interval{0.0, 1.0};
  double epsilon = 0.0;
  double c_bound = 0.0;
  long t_max = 0;
  long tbar_max = 0;
  double step_scale = 0.0;
  std::size_t batch = 0;
};

struct LsdResult {
  ParamVector theta;
  LsdTrace trace;
};

/// Thrown on a non-finite gradient or outcome; carries the partial trace.
class LsdAborted : public std::runtime_error {
 public:
  LsdAborted(const std::string& what, LsdTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const LsdTrace& trace() const { return trace_; }

 private:
  LsdTrace trace_;
};

/// -(1/N) sum_i u'(x_i) grads_i.
ParamVector lsd_subgradient(const OutcomeBatch& batch, const PiecewiseUtility& u);

/// [a, b] per config (explicit interval wins), from a pooled batch.
Interval resolve_interval(const LsdConfig& config, std::span<const double> pooled);

LsdResult lsd_fit(const PathwiseModel& model, const LsdConfig& config);
LsdResult lsd_fit(const PathwiseModel& model, const LsdConfig& config,
                  ParamVector theta0);

/// Score-function form on episodic returns; theta are tabular logits.
LsdResult lsd_pg(int states, int actions, const EpisodicEnv& env,
                 const LsdConfig& config);

/// Every violated control-flow law of a trace, empty when all hold.
std::vector<std::string> trace_violations(const LsdTrace& trace);

/// NDJSON, one {t, tbar, gap_check, step, grad_norm, accepted} per line.
void write_trace_ndjson(std::ostream& out, const LsdTrace& trace);

// ---------------------------------------------------------------------------
// Baselines: stochastic gradient ascent on a batch statistic.

struct SgdConfig {
  std::size_t steps = 500;
  std::size_t batch = 256;
  StepSchedule schedule;
  std::uint64_t seed = 0;
};

struct StepRecord {
  long t = 0;
  double objective = 0.0;  // batch statistic before the step
  double step = 0.0;
  double grad_norm = 0.0;
};

void write_steps_ndjson(std::ostream& out, const std::vector<StepRecord>& steps);

ParamVector sgd_erm_fit(const PathwiseModel& model, const SgdConfig& config,
                        std::vector<StepRecord>* trace = nullptr);

/// Ascent on mean(x) - lambda * var(x) with the unbiased sample variance.
ParamVector mean_variance_fit(const PathwiseModel& model, double lambda,
                              const SgdConfig& config,
                              std::vector<StepRecord>* trace = nullptr);

/// theta += step / N * sum_i R_i score_i.
ParamVector reinforce_fit(int states, int actions, const EpisodicEnv& env,
                          const SgdConfig& config,
                          std::vector<StepRecord>* trace = nullptr);

/// Per-sample weights of the CVaR_alpha score gradient:
/// q + 1{R_i <= q} (R_i - q) / alpha, q the ceil(alpha N)-th smallest return.
std::vector<double> cvar_weights(std::span<const double> returns, double alpha);

ParamVector cvar_pg_fit(int states, int actions, const EpisodicEnv& env,
                        double alpha, const SgdConfig& config,
                        std::vector<StepRecord>* trace = nullptr);

// ---------------------------------------------------------------------------
// Probe certificate after an LSD run.

struct ProbeConfig {
  int random_probes = 20;
  double perturb_scale = 1.0;
  int sgd_probes = 5;
  SgdConfig sgd{20, 256, {1.0, StepSchedule::Kind::Constant}, 0};
  std::uint64_t seed = 0;
};

struct ProbeReport {
  std::vector<double> random_gaps;  // Omega_2(X_probe, X_out)
  std::vector<double> sgd_gaps;
  double min_gap = 0.0;
  bool passed = false;  // every gap >= -epsilon
};

/// Fresh batches of trace.batch outcomes on trace.interval.
ProbeReport probe_certificate(const PathwiseModel& model,
                              const ParamVector& theta_out,
                              const LsdTrace& trace, const ProbeConfig& config);

}  // namespace stochdom
