#include "stochdom/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <ostream>
#include <random>

#include "json.hpp"
#include "stochdom/risk_metrics.hpp"

namespace stochdom {

double StepSchedule::at(long t) const {
  if (kind == Kind::Constant) return scale;
  return scale / std::sqrt(static_cast<double>(t) + 1.0);
}

std::string to_string(Termination reason) {
  switch (reason) {
    case Termination::Certified:
      return "non-dominance-certified";
    case Termination::BudgetExhausted:
      return "budget-exhausted";
    case Termination::Aborted:
      return "aborted";
  }
  return "unknown";
}

void validate_lsd_config(const LsdConfig& c) {
  if (c.order != 2) throw std::invalid_argument("lsd optimizes order 2 only");
  if (!(c.epsilon > 0.0) || !std::isfinite(c.epsilon)) {
    throw std::invalid_argument("epsilon must be > 0");
  }
  if (c.batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (c.tbar_max < 1) throw std::invalid_argument("tbar_max must be >= 1");
  if (c.t_max && *c.t_max < 1) throw std::invalid_argument("t_max must be >= 1");
  if (c.c_bound && !(*c.c_bound > 0.0)) {
    throw std::invalid_argument("c_bound must be > 0");
  }
  if (!(c.step_scale > 0.0)) throw std::invalid_argument("step_scale must be > 0");
  if (!(c.interval_kappa > 0.0)) {
    throw std::invalid_argument("interval_kappa must be > 0");
  }
}

ParamVector lsd_subgradient(const OutcomeBatch& batch,
                            const PiecewiseUtility& u) {
  if (static_cast<std::size_t>(batch.grads.rows()) != batch.size() ||
      batch.size() == 0) {
    throw std::invalid_argument("gradient rows do not match outcome count");
  }
  ParamVector g = ParamVector::Zero(batch.grads.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double w = u.deriv(batch.values[i]);
    if (w != 0.0) g += w * batch.grads.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return -g / static_cast<double>(batch.size());
}

Interval resolve_interval(const LsdConfig& config,
                          std::span<const double> pooled) {
  if (config.interval) return *config.interval;
  if (config.interval_rule == IntervalRule::Range) {
    const auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
    const double range = *hi - *lo;
    if (range == 0.0) return {*lo - 1.0, *hi + 1.0};
    return {*lo - 0.1 * range, *hi + 0.1 * range};
  }
  const double m = mean(pooled);
  const double s = std::sqrt(variance(pooled));
  if (s == 0.0) return {m - 1.0, m + 1.0};
  return {m - config.interval_kappa * s, m + config.interval_kappa * s};
}

namespace {

using Sampler = std::function<OutcomeBatch(const ParamVector&, std::size_t, Rng&)>;
using Direction = std::function<ParamVector(const OutcomeBatch&, const PiecewiseUtility&)>;
using Projector = std::function<void(ParamVector&)>;

LsdResult run_lsd(ParamVector theta0, const LsdConfig& config,
                  const Sampler& sample, const Direction& direction,
                  const Projector& project) {
  validate_lsd_config(config);
  const std::size_t n = config.batch;
  Rng rng = make_rng(config.seed, stable_hash("lsd"));

  LsdTrace trace;
  trace.epsilon = config.epsilon;
  trace.tbar_max = config.tbar_max;
  trace.step_scale = config.step_scale;
  trace.batch = n;

  const OutcomeBatch pooled = sample(theta0, 2 * n, rng);
  trace.interval = resolve_interval(config, pooled.values);
  trace.c_bound = config.c_bound.value_or(
      empirical_f2(pooled.values, trace.interval.b()));
  trace.t_max = config.t_max.value_or(static_cast<long>(
      std::ceil(4.0 * trace.c_bound / config.epsilon + 1.0)));

  const std::size_t capacity =
      config.replay_capacity ? config.replay_capacity : 4 * n;
  std::deque<double> replay(pooled.values.begin(), pooled.values.end());
  while (replay.size() > capacity) replay.pop_front();

  const StepSchedule schedule{config.step_scale, StepSchedule::Kind::InvSqrt};
  const double threshold = -config.epsilon / 2.0;
  ParamVector theta_ref = std::move(theta0);

  try {
    for (long t = 0; t < trace.t_max; ++t) {
      ParamVector theta = theta_ref;
      bool updated = false;
      for (long tbar = 0; tbar < config.tbar_max; ++tbar) {
        const OutcomeBatch current = sample(theta, n, rng);
        std::vector<double> reference;
        if (config.replay) {
          std::uniform_int_distribution<std::size_t> pick(0, replay.size() - 1);
          reference.resize(n);
          for (auto& r : reference) r = replay[pick(rng)];
        } else {
          reference = sample(theta_ref, n, rng).values;
        }

        const auto [u, gap] = solve_utility(current.values, reference, trace.interval);
        const ParamVector g = direction(current, u);
        if (!g.allFinite()) {
          throw std::runtime_error("non-finite gradient at t=" + std::to_string(t) +
                                   " tbar=" + std::to_string(tbar));
        }
        const double step = schedule.at(tbar);
        theta -= step * g;
        project(theta);

        if (config.replay) {
          for (double x : current.values) replay.push_back(x);
          while (replay.size() > capacity) replay.pop_front();
        }

        // Progress is judged on batches not used for the step.
        const OutcomeBatch fresh_cur = sample(theta, n, rng);
        const OutcomeBatch fresh_ref = sample(theta_ref, n, rng);
        const double check =
            dominance_gap(config.order, fresh_cur.values, fresh_ref.values,
                          trace.interval)
                .value;

        TraceRecord rec;
        rec.t = t;
        rec.tbar = tbar;
        rec.gap_check = check;
        rec.step = step;
        rec.grad_norm = g.norm();
        rec.accepted = check <= threshold;
        trace.records.push_back(rec);

        if (rec.accepted) {
          trace.updates.push_back(trace.records.size() - 1);
          theta_ref = theta;
          updated = true;
          break;
        }
      }
      if (!updated) {
        trace.reason = Termination::Certified;
        return {theta_ref, std::move(trace)};
      }
    }
  } catch (const std::runtime_error& e) {
    trace.reason = Termination::Aborted;
    throw LsdAborted(e.what(), std::move(trace));
  }
  trace.reason = Termination::BudgetExhausted;
  return {theta_ref, std::move(trace)};
}

}  // namespace

LsdResult lsd_fit(const PathwiseModel& model, const LsdConfig& config) {
  return lsd_fit(model, config, model.initial_params());
}

LsdResult lsd_fit(const PathwiseModel& model, const LsdConfig& config,
                  ParamVector theta0) {
  if (static_cast<std::size_t>(theta0.size()) != model.dim()) {
    throw std::invalid_argument("initial parameters have wrong dimension");
  }
  return run_lsd(
      std::move(theta0), config,
      [&](const ParamVector& th, std::size_t n, Rng& rng) {
        return model.sample_outcomes(th, n, rng);
      },
      lsd_subgradient, [&](ParamVector& th) { model.project(th); });
}

LsdResult lsd_pg(int states, int actions, const EpisodicEnv& env,
                 const LsdConfig& config) {
  const bool baseline = config.score_baseline;
  ParamVector theta0 = ParamVector::Zero(static_cast<Eigen::Index>(states) * actions);
  return run_lsd(
      std::move(theta0), config,
      [&](const ParamVector& th, std::size_t n, Rng& rng) {
        return sample_episodes(TabularPolicy(states, actions, th), env, n, rng);
      },
      [baseline](const OutcomeBatch& batch, const PiecewiseUtility& u) {
        std::vector<double> w(batch.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = u.eval(batch.values[i]);
        if (baseline) {
          const double b = mean(w);
          for (double& x : w) x -= b;
        }
        ParamVector g = ParamVector::Zero(batch.grads.cols());
        for (std::size_t i = 0; i < w.size(); ++i) {
          g += w[i] * batch.grads.row(static_cast<Eigen::Index>(i)).transpose();
        }
        return ParamVector(-g / static_cast<double>(batch.size()));
      },
      [](ParamVector&) {});
}

std::vector<std::string> trace_violations(const LsdTrace& trace) {
  std::vector<std::string> out;
  const double threshold = -trace.epsilon / 2.0;
  const StepSchedule schedule{trace.step_scale, StepSchedule::Kind::InvSqrt};
  const auto& recs = trace.records;

  std::vector<std::size_t> accepted;
  long last_t = -1;
  long expected_tbar = 0;
  bool group_closed = true;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    const std::string at = "record " + std::to_string(i) + ": ";
    if (r.t != last_t) {
      if (r.t != last_t + 1) out.push_back(at + "outer index skips");
      if (!group_closed) out.push_back(at + "outer loop advanced without an update");
      last_t = r.t;
      expected_tbar = 0;
      group_closed = false;
    }
    if (r.tbar != expected_tbar) out.push_back(at + "inner index not consecutive");
    ++expected_tbar;
    if (r.step != schedule.at(r.tbar)) out.push_back(at + "step off schedule");
    if (r.accepted != (r.gap_check <= threshold)) {
      out.push_back(at + "acceptance disagrees with the progress check");
    }
    if (r.accepted) {
      accepted.push_back(i);
      group_closed = true;
      if (i + 1 < recs.size() && recs[i + 1].t == r.t) {
        out.push_back(at + "inner loop continued after an update");
      }
    }
    if (r.tbar >= trace.tbar_max) out.push_back(at + "inner index exceeds cap");
  }
  if (accepted != trace.updates) out.push_back("update list does not match records");

  const auto total = static_cast<long>(recs.size());
  if (total > trace.t_max * trace.tbar_max) out.push_back("iteration budget exceeded");
  if (last_t >= trace.t_max) out.push_back("outer index exceeds t_max");

  double chain = 0.0;
  for (std::size_t i : trace.updates) {
    if (i < recs.size()) chain += recs[i].gap_check;
  }
  if (chain > threshold * static_cast<double>(trace.updates.size())) {
    out.push_back("sum of accepted gaps above -updates * epsilon / 2");
  }

  if (trace.reason == Termination::Certified) {
    if (recs.empty() || group_closed || expected_tbar != trace.tbar_max) {
      out.push_back("certified without an update-free full inner loop");
    }
    if (static_cast<long>(trace.updates.size()) > trace.t_max - 1) {
      out.push_back("certified run has more than t_max - 1 updates");
    }
  } else if (trace.reason == Termination::BudgetExhausted) {
    if (!group_closed || last_t + 1 != trace.t_max) {
      out.push_back("budget exhaustion before t_max outer loops");
    }
  }
  return out;
}

void write_trace_ndjson(std::ostream& out, const LsdTrace& trace) {
  for (const TraceRecord& r : trace.records) {
    nlohmann::json j;
    j["t"] = r.t;
    j["tbar"] = r.tbar;
    j["gap_check"] = r.gap_check;
    j["step"] = r.step;
    j["grad_norm"] = r.grad_norm;
    j["accepted"] = r.accepted;
    out << j.dump() << '\n';
  }
}

void write_steps_ndjson(std::ostream& out, const std::vector<StepRecord>& steps) {
  for (const StepRecord& r : steps) {
    nlohmann::json j;
    j["t"] = r.t;
    j["objective"] = r.objective;
    j["step"] = r.step;
    j["grad_norm"] = r.grad_norm;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

ParamVector ascend(const PathwiseModel& model, double lambda,
                   const SgdConfig& config, ParamVector theta, Rng& rng,
                   std::vector<StepRecord>* trace) {
  if (config.batch < 2 && lambda != 0.0) {
    throw std::invalid_argument("variance penalty needs batch >= 2");
  }
  if (config.batch < 1) throw std::invalid_argument("batch must be >= 1");
  const double n = static_cast<double>(config.batch);
  for (std::size_t t = 0; t < config.steps; ++t) {
    const OutcomeBatch batch = model.sample_outcomes(theta, config.batch, rng);
    const Eigen::Map<const Eigen::VectorXd> x(batch.values.data(),
                                              static_cast<Eigen::Index>(batch.size()));
    const double xbar = x.mean();
    ParamVector g = batch.grads.colwise().mean().transpose();
    double objective = xbar;
    if (lambda != 0.0) {
      const Eigen::VectorXd centered = x.array() - xbar;
      g -= lambda * (2.0 / (n - 1.0)) * (batch.grads.transpose() * centered);
      objective -= lambda * centered.squaredNorm() / (n - 1.0);
    }
    if (!g.allFinite()) {
      throw std::runtime_error("non-finite gradient at step " + std::to_string(t));
    }
    const double step = config.schedule.at(static_cast<long>(t));
    if (trace) trace->push_back({static_cast<long>(t), objective, step, g.norm()});
    theta += step * g;
    model.project(theta);
  }
  return theta;
}

using WeightFn = std::function<std::vector<double>(std::span<const double>)>;

ParamVector pg_ascend(int states, int actions, const EpisodicEnv& env,
                      const WeightFn& weights, const SgdConfig& config,
                      std::vector<StepRecord>* trace) {
  if (config.batch < 1) throw std::invalid_argument("batch must be >= 1");
  Rng rng = make_rng(config.seed, stable_hash("pg"));
  TabularPolicy policy(states, actions);
  for (std::size_t t = 0; t < config.steps; ++t) {
    const OutcomeBatch batch = sample_episodes(policy, env, config.batch, rng);
    const std::vector<double> w = weights(batch.values);
    ParamVector g = ParamVector::Zero(static_cast<Eigen::Index>(policy.dim()));
    double objective = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      g += w[i] * batch.grads.row(static_cast<Eigen::Index>(i)).transpose();
      objective += w[i];
    }
    g /= static_cast<double>(batch.size());
    objective /= static_cast<double>(batch.size());
    if (!g.allFinite()) {
      throw std::runtime_error("non-finite gradient at step " + std::to_string(t));
    }
    const double step = config.schedule.at(static_cast<long>(t));
    if (trace) trace->push_back({static_cast<long>(t), objective, step, g.norm()});
    policy.set_theta(policy.theta() + step * g);
  }
  return policy.theta();
}

}  // namespace

ParamVector sgd_erm_fit(const PathwiseModel& model, const SgdConfig& config,
                        std::vector<StepRecord>* trace) {
  return mean_variance_fit(model, 0.0, config, trace);
}

ParamVector mean_variance_fit(const PathwiseModel& model, double lambda,
                              const SgdConfig& config,
                              std::vector<StepRecord>* trace) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  Rng rng = make_rng(config.seed, stable_hash("sgd"));
  return ascend(model, lambda, config, model.initial_params(), rng, trace);
}

ParamVector reinforce_fit(int states, int actions, const EpisodicEnv& env,
                          const SgdConfig& config,
                          std::vector<StepRecord>* trace) {
  return pg_ascend(
      states, actions, env,
      [](std::span<const double> r) { return std::vector<double>(r.begin(), r.end()); },
      config, trace);
}

std::vector<double> cvar_weights(std::span<const double> returns, double alpha) {
  if (returns.empty()) throw std::invalid_argument("empty batch");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("cvar alpha must lie in (0, 1]");
  }
  const std::size_t n = returns.size();
  auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<double> sorted(returns.begin(), returns.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted.end());
  const double q = sorted[k - 1];
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = returns[i] <= q ? q + (returns[i] - q) / alpha : q;
  }
  return w;
}

ParamVector cvar_pg_fit(int states, int actions, const EpisodicEnv& env,
                        double alpha, const SgdConfig& config,
                        std::vector<StepRecord>* trace) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("cvar alpha must lie in (0, 1]");
  }
  return pg_ascend(
      states, actions, env,
      [alpha](std::span<const double> r) { return cvar_weights(r, alpha); },
      config, trace);
}

// ---------------------------------------------------------------------------

ProbeReport probe_certificate(const PathwiseModel& model,
                              const ParamVector& theta_out,
                              const LsdTrace& trace, const ProbeConfig& config) {
  Rng rng = make_rng(config.seed, stable_hash("probe"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = trace.batch;

  auto gap_against_out = [&](const ParamVector& probe) {
    const OutcomeBatch xp = model.sample_outcomes(probe, n, rng);
    const OutcomeBatch xo = model.sample_outcomes(theta_out, n, rng);
    return dominance_gap(2, xp.values, xo.values, trace.interval).value;
  };

  ProbeReport report;
  for (int i = 0; i < config.random_probes; ++i) {
    ParamVector probe = theta_out;
    for (Eigen::Index j = 0; j < probe.size(); ++j) {
      probe(j) += config.perturb_scale * normal(rng);
    }
    model.project(probe);
    report.random_gaps.push_back(gap_against_out(probe));
  }
  for (int i = 0; i < config.sgd_probes; ++i) {
    SgdConfig sgd = config.sgd;
    sgd.seed = config.seed + static_cast<std::uint64_t>(i);
    Rng probe_rng = make_rng(sgd.seed, stable_hash("sgd-probe"));
    const ParamVector probe = ascend(model, 0.0, sgd, theta_out, probe_rng, nullptr);
    report.sgd_gaps.push_back(gap_against_out(probe));
  }

  report.min_gap = std::numeric_limits<double>::infinity();
  for (double g : report.random_gaps) report.min_gap = std::min(report.min_gap, g);
  for (double g : report.sgd_gaps) report.min_gap = std::min(report.min_gap, g);
  report.passed = report.min_gap >= -trace.epsilon;
  return report;
}

}  // namespace stochdom
