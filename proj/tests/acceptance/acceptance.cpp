// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "stochdom/envs.hpp"
#include "stochdom/experiment.hpp"
#include "stochdom/models.hpp"
#include "stochdom/optimizers.hpp"
#include "stochdom/risk_metrics.hpp"
#include "stochdom/sd_core.hpp"

using namespace stochdom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ExperimentConfig config(const std::string& name) {
  return load_config(fs::path(STOCHDOM_CONFIG_DIR) / name);
}

MethodSpec method(const std::string& name, std::optional<double> param = {}) {
  return {name, param};
}

// Traces from every LSD run made below, checked together by criterion 8.
std::vector<std::pair<std::string, LsdTrace>> g_traces;

RunResult run(const ExperimentConfig& cfg, const MethodSpec& m, std::uint64_t seed) {
  RunResult r = execute_run(cfg, m, seed);
  if (r.lsd_trace) {
    g_traces.emplace_back(cfg.output_dir + "/" + m.label() + "_" + std::to_string(seed),
                          *r.lsd_trace);
  }
  return r;
}

std::vector<double> batch(std::mt19937_64& g, std::size_t max_n) {
  std::uniform_int_distribution<std::size_t> size(1, max_n);
  std::bernoulli_distribution dup(0.5);
  return oracle::mixed_batch(g, size(g), dup(g));
}

Interval random_interval(std::mt19937_64& g) {
  std::uniform_real_distribution<double> lo(-3.0, 0.0), hi(0.05, 3.0);
  return Interval(lo(g), hi(g));
}

Outcome criterion1() {
  std::mt19937_64 g(101);
  double max_gap_err = 0.0, max_l_err = 0.0, solver_time = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto xs = batch(g, 200);
    const auto ys = batch(g, 200);
    const Interval iv = random_interval(g);
    const auto t0 = Clock::now();
    const auto [u, gap] = solve_utility(xs, ys, iv);
    const double l = l_hat(u, xs, ys);
    solver_time += seconds_since(t0);
    const double brute = oracle::gap(2, xs, ys, iv.a(), iv.b());
    max_gap_err = std::max(max_gap_err, std::abs(gap.value - brute));
    max_l_err = std::max(max_l_err, std::abs(l - gap.value));
  }
  return {max_gap_err <= 1e-9 && max_l_err <= 1e-12 && solver_time < 10.0,
          fmt("max |gap - brute| %.2e, max |L - gap| %.2e, solver time %.2f s",
              max_gap_err, max_l_err, solver_time)};
}

Outcome criterion2() {
  std::mt19937_64 g(202);
  double worst_triangle = -INFINITY, worst_identity = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto xs = batch(g, 100);
    const auto ys = batch(g, 100);
    const auto zs = batch(g, 100);
    const Interval iv = random_interval(g);
    for (int k : {1, 2}) {
      const double lhs = dominance_gap(k, xs, zs, iv).value;
      const double rhs = dominance_gap(k, xs, ys, iv).value + dominance_gap(k, ys, zs, iv).value;
      worst_triangle = std::max(worst_triangle, lhs - rhs);
      worst_identity = std::max(worst_identity, std::abs(dominance_gap(k, xs, xs, iv).value));
    }
  }
  return {worst_triangle <= 1e-12 && worst_identity == 0.0,
          fmt("max triangle excess %.2e, max |gap(X,X)| %.2e", worst_triangle, worst_identity)};
}

/// Relative error of the weighted subgradient against central differences of
/// theta -> -mean u(x_i(theta)) with realizations and u frozen.
double gradient_error(const std::function<OutcomeBatch(const ParamVector&)>& eval,
                      const ParamVector& theta, const std::vector<double>& ref) {
  const OutcomeBatch b = eval(theta);
  std::vector<double> pooled = b.values;
  pooled.insert(pooled.end(), ref.begin(), ref.end());
  const Interval iv = resolve_interval(LsdConfig{}, pooled);
  const auto [u, gap] = solve_utility(b.values, ref, iv);
  const ParamVector grad = lsd_subgradient(b, u);
  auto objective = [&](const ParamVector& th) {
    double s = 0.0;
    for (double x : eval(th).values) s += u(x);
    return -s / static_cast<double>(b.size());
  };
  ParamVector fd(theta.size());
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    ParamVector up = theta, dn = theta;
    up(j) += h;
    dn(j) -= h;
    fd(j) = (objective(up) - objective(dn)) / (2 * h);
  }
  return (grad - fd).norm() / std::max(fd.norm(), 1e-8);
}

Outcome criterion3() {
  std::mt19937_64 g(303);
  std::normal_distribution<double> n01;
  double worst_portfolio = 0.0, worst_supervised = 0.0;

  MarketSpec ms;
  ms.assets = 10;
  ms.components = 3;
  ms.seed = 4;
  const auto market = std::make_shared<MixtureMarket>(resolve_market(ms));
  const PortfolioModel portfolio(market);
  Rng rng = make_rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    ParamVector theta(10);
    for (auto& x : theta) x = n01(g);
    const Eigen::MatrixXd r = market->sample(64, rng);
    const auto ref = portfolio.evaluate(ParamVector::Zero(10), market->sample(64, rng)).values;
    worst_portfolio = std::max(
        worst_portfolio,
        gradient_error([&](const ParamVector& th) { return portfolio.evaluate(th, r); },
                       theta, ref));
  }

  for (const auto kind : {SupervisedKind::LinearRegression, SupervisedKind::LogisticClassification}) {
    SupervisedSpec spec;
    spec.task = kind;
    spec.seed = 6;
    const auto data = std::make_shared<Dataset>(make_dataset(spec));
    const SupervisedModel model(kind, data);
    std::uniform_int_distribution<std::size_t> row(0, static_cast<std::size_t>(spec.samples) - 1);
    for (int rep = 0; rep < 50; ++rep) {
      ParamVector theta(spec.dim);
      for (auto& x : theta) x = n01(g);
      std::vector<std::size_t> rows(64), other(64);
      for (auto& i : rows) i = row(g);
      for (auto& i : other) i = row(g);
      const auto ref = model.evaluate(ParamVector::Zero(spec.dim), other).values;
      worst_supervised = std::max(
          worst_supervised,
          gradient_error([&](const ParamVector& th) { return model.evaluate(th, rows); },
                         theta, ref));
    }
  }
  return {worst_portfolio <= 1e-5 && worst_supervised <= 1e-5,
          fmt("max relative error: portfolio %.2e, supervised %.2e", worst_portfolio,
              worst_supervised)};
}

Outcome criterion4() {
  std::mt19937_64 g(404);
  double worst = 0.0;
  for (int n = 1; n <= 8; ++n) {
    for (int rep = 0; rep < 500; ++rep) {
      const auto xs = oracle::mixed_batch(g, static_cast<std::size_t>(n), rep % 2 == 0);
      for (int r = 1; r <= 19; ++r) {
        const double rho = 0.05 * r;
        worst = std::max(worst, std::abs(dro_value(xs, rho) - dro_bruteforce(xs, rho)));
      }
    }
  }
  // Loss table: mean loss 0.0283, MAD 0.0286, rho 0.1.
  const double m = 0.0283, d = 1.5 * 0.0286;
  const std::vector<double> outcomes{-(m - d), -m, -(m + d)};
  const double table = -dro_value(outcomes, 0.1);
  return {worst <= 1e-12 && std::abs(table - 0.0312) <= 5e-4,
          fmt("max |closed form - vertex search| %.2e, table value %.5f", worst, table)};
}

// Portfolio runs are shared by criteria 5 and 9.
std::vector<RunResult> g_portfolio_lsd;

Outcome criterion5() {
  const ExperimentConfig cfg = config("portfolio.json");
  bool pass = true;
  std::string detail;
  double slowest = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    const auto t0 = Clock::now();
    RunResult lsd = run(cfg, method("lsd"), seed);
    const RunResult sgd = run(cfg, method("sgd"), seed);
    slowest = std::max(slowest, seconds_since(t0));
    const double vl = variance(lsd.eval), vs = variance(sgd.eval);
    const double sl = sharpe(lsd.eval), ss = sharpe(sgd.eval);
    pass = pass && vl < 0.2 * vs && sl >= ss;
    detail += fmt("seed %llu var %.3f/%.3f sharpe %.3f/%.3f; ",
                  static_cast<unsigned long long>(seed), vl, vs, sl, ss);
    g_portfolio_lsd.push_back(std::move(lsd));
  }
  pass = pass && slowest < 300.0;
  return {pass, detail + fmt("(lsd/sgd) slowest seed %.1f s", slowest)};
}

/// Weight of the variance-1 asset whose return curve F2 lies below every other
/// weight's, by closed-form Gaussian F2 over a grid of weights and points.
double two_asset_oracle_weight() {
  std::vector<double> ws, etas;
  for (int i = 0; i <= 1000; ++i) ws.push_back(i / 1000.0);
  for (int i = 0; i <= 260; ++i) etas.push_back(-6.0 + i * 0.05);
  auto f2 = [](double w, double eta) {
    return oracle::normal_f2(0.5, std::sqrt(w * w + 4.0 * (1 - w) * (1 - w)), eta);
  };
  std::vector<double> envelope(etas.size(), INFINITY);
  for (double w : ws) {
    for (std::size_t j = 0; j < etas.size(); ++j) envelope[j] = std::min(envelope[j], f2(w, etas[j]));
  }
  for (double w : ws) {
    bool dominant = true;
    for (std::size_t j = 0; j < etas.size() && dominant; ++j) {
      dominant = f2(w, etas[j]) <= envelope[j] + 1e-12;
    }
    if (dominant) return w;
  }
  return NAN;
}

Outcome criterion6() {
  const ExperimentConfig cfg = config("two_asset.json");
  const double w_star = two_asset_oracle_weight();
  double min_lsd = INFINITY, sgd_sum = 0.0, lsd_sum = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    const double w = softmax(run(cfg, method("lsd"), seed).theta)(0);
    min_lsd = std::min(min_lsd, w);
    lsd_sum += w;
    sgd_sum += softmax(run(cfg, method("sgd"), seed).theta)(0);
  }
  const double n = static_cast<double>(cfg.seeds.size());
  const double sgd_mean = sgd_sum / n;
  return {w_star > 0.6 && min_lsd > 0.6 && std::abs(sgd_mean - 0.5) < 0.15,
          fmt("oracle weight %.3f, lsd min %.3f mean %.3f, sgd mean %.3f", w_star, min_lsd,
              lsd_sum / n, sgd_mean)};
}

Outcome criterion7() {
  const ExperimentConfig cfg = config("cliffwalk.json");
  std::vector<double> lsd, rf;
  double slowest = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    const auto t0 = Clock::now();
    const auto a = run(cfg, method("lsd"), seed).eval;
    const auto b = run(cfg, method("reinforce"), seed).eval;
    slowest = std::max(slowest, seconds_since(t0));
    lsd.insert(lsd.end(), a.begin(), a.end());
    rf.insert(rf.end(), b.begin(), b.end());
  }
  auto p_neg = [](const std::vector<double>& v) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), [](double x) { return x < 0; })) /
           static_cast<double>(v.size());
  };
  const Interval iv = *cfg.lsd.interval;
  double worst_f2 = -INFINITY;
  for (double eta : oracle::dense_grid(lsd, rf, iv.a(), iv.b())) {
    worst_f2 = std::max(worst_f2, oracle::f2(lsd, eta) - oracle::f2(rf, eta));
  }
  const double ml = mean(lsd), mr = mean(rf), pl = p_neg(lsd), pr = p_neg(rf);
  return {std::abs(ml - mr) <= 0.05 && pl < pr && worst_f2 <= 0.02 && slowest < 600.0,
          fmt("mean %.4f vs %.4f, P(<0) %.4f vs %.4f, max F2 excess %.4f, slowest seed %.1f s",
              ml, mr, pl, pr, worst_f2, slowest)};
}

Outcome criterion8() {
  const ExperimentConfig cfg = config("supervised.json");
  for (std::uint64_t seed : cfg.seeds) run(cfg, method("lsd"), seed);
  std::size_t bad = 0;
  std::string first;
  for (const auto& [id, trace] : g_traces) {
    const auto v = trace_violations(trace);
    if (!v.empty()) {
      if (bad++ == 0) first = id + ": " + v.front();
    }
  }
  return {bad == 0 && !g_traces.empty(),
          fmt("%zu traces checked, %zu with violations", g_traces.size(), bad) +
              (first.empty() ? "" : " (" + first + ")")};
}

Outcome criterion9() {
  std::size_t certified = 0, passed = 0;
  double min_gap = INFINITY;
  for (const RunResult& r : g_portfolio_lsd) {
    if (r.lsd_trace->reason != Termination::Certified) continue;
    ++certified;
    if (r.probe && r.probe->passed && r.probe->random_gaps.size() == 20 &&
        r.probe->sgd_gaps.size() == 5) {
      ++passed;
      min_gap = std::min(min_gap, r.probe->min_gap);
    }
  }
  return {certified > 0 && passed == certified,
          fmt("%zu of %zu portfolio runs certified, %zu probe sets passed, min gap %.4f",
              certified, g_portfolio_lsd.size(), passed, min_gap)};
}

Outcome criterion10() {
  std::mt19937_64 g(1010);
  std::uniform_real_distribution<double> unif(-1.0, 1.0), spread(0.0, 0.4), shift(0.0, 0.2);
  const Interval iv(-3.0, 3.0);
  int certified = 0, violations = 0;
  while (certified < 200) {
    std::vector<double> xs, ys;
    const double down = certified % 3 == 0 ? 0.0 : shift(g);
    for (int i = 0; i < 20; ++i) {
      const double x = unif(g), d = spread(g);
      xs.insert(xs.end(), {x, x});
      ys.insert(ys.end(), {x - down - d, x - down + d});
    }
    if (dominance_gap(2, xs, ys, iv).value > 1e-12) continue;
    ++certified;
    if (mean(xs) - semideviation1(xs) < mean(ys) - semideviation1(ys) - 1e-9) ++violations;
  }
  return {violations == 0, fmt("%d certified pairs, %d ordering violations", certified, violations)};
}

Outcome criterion11() {
  ExperimentConfig cfg = config("two_asset.json");
  cfg.seeds = {0, 1};
  const fs::path root = fs::temp_directory_path() / "stochdom_acceptance_determinism";
  fs::remove_all(root);
  for (const char* d : {"a", "b"}) run_experiment(cfg, {.out_dir = root / d});
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    const std::string name = e.path().filename().string();
    if (name.rfind("metrics_", 0) != 0) continue;
    ++files;
    if (slurp(e.path()) != slurp(root / "b" / name)) ++differ;
  }
  fs::remove_all(root);
  return {files == 4 && differ == 0, fmt("%zu metrics files compared, %zu differ", files, differ)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"utility-solver exactness", criterion1},
      {"triangle inequality and identity", criterion2},
      {"gradient fidelity", criterion3},
      {"DRO identity", criterion4},
      {"portfolio variance and Sharpe", criterion5},
      {"two-asset SSD selection", criterion6},
      {"cliffwalk return profile", criterion7},
      {"LSD control-flow laws", criterion8},
      {"non-dominance probes", criterion9},
      {"semideviation consistency", criterion10},
      {"determinism", criterion11},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %2zu %s: %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL",
                criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
