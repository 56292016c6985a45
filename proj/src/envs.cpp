#include "stochdom/envs.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace stochdom {

double chi2_3_multiplier(Rng& rng) {
  return std::chi_squared_distribution<double>(3.0)(rng) / 3.0;
}

// ---------------------------------------------------------------------------

MarketSpec resolve_market(MarketSpec spec) {
  if (spec.assets < 1 || spec.components < 1) {
    throw std::invalid_argument("market needs >= 1 asset and component");
  }
  if (!spec.means.empty() || !spec.factors.empty()) {
    spec.explicit_components = true;
    validate_market(spec);
    return spec;
  }
  Rng rng = make_rng(spec.seed, stable_hash("market"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const int k = spec.assets;
  const double f_sd = 1.0 / std::sqrt(static_cast<double>(k));
  for (int j = 0; j < spec.components; ++j) {
    Eigen::VectorXd mean(k);
    for (int i = 0; i < k; ++i) mean(i) = normal(rng);
    Eigen::MatrixXd f(k, k);
    for (int c = 0; c < k; ++c) {
      for (int r = 0; r < k; ++r) f(r, c) = f_sd * normal(rng);
    }
    Eigen::MatrixXd cov = f * f.transpose();
    cov.diagonal().array() += 0.01;
    Eigen::MatrixXd chol = cov.llt().matrixL();
    spec.means.push_back(std::move(mean));
    spec.factors.push_back(std::move(chol));
  }
  spec.explicit_components = false;
  return spec;
}

void validate_market(const MarketSpec& spec) {
  if (spec.assets < 1) throw std::invalid_argument("market needs >= 1 asset");
  if (spec.means.size() != spec.factors.size() || spec.means.empty()) {
    throw std::invalid_argument("market needs one mean and factor per component");
  }
  if (static_cast<int>(spec.means.size()) != spec.components) {
    throw std::invalid_argument("market component count mismatch");
  }
  for (std::size_t j = 0; j < spec.means.size(); ++j) {
    if (spec.means[j].size() != spec.assets ||
        spec.factors[j].rows() != spec.assets || spec.factors[j].cols() < 1) {
      throw std::invalid_argument("market component " + std::to_string(j) +
                                  " has wrong shape");
    }
    if (!spec.means[j].allFinite() || !spec.factors[j].allFinite()) {
      throw std::invalid_argument("market component " + std::to_string(j) +
                                  " is not finite");
    }
  }
}

MarketSpec gaussian_factor_market(Eigen::VectorXd means,
                                  Eigen::MatrixXd loading) {
  MarketSpec spec;
  spec.assets = static_cast<int>(means.size());
  spec.components = 1;
  spec.heavy_tail = false;
  spec.means.push_back(std::move(means));
  spec.factors.push_back(std::move(loading));
  spec.explicit_components = true;
  validate_market(spec);
  return spec;
}

Eigen::MatrixXd market_sample(const MarketSpec& spec, std::size_t n,
                              Rng& rng) {
  const auto k = static_cast<Eigen::Index>(spec.assets);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), k);
  std::uniform_int_distribution<std::size_t> pick(0, spec.means.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = spec.means.size() == 1 ? 0 : pick(rng);
    const Eigen::MatrixXd& f = spec.factors[j];
    z.resize(f.cols());
    for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = normal(rng);
    Eigen::VectorXd dev = f * z;
    if (spec.heavy_tail) dev *= chi2_3_multiplier(rng);
    out.row(static_cast<Eigen::Index>(i)) = (spec.means[j] + dev).transpose();
  }
  return out;
}

MixtureMarket::MixtureMarket(MarketSpec spec) : spec_(std::move(spec)) {
  validate_market(spec_);
}

std::size_t MixtureMarket::assets() const {
  return static_cast<std::size_t>(spec_.assets);
}

Eigen::MatrixXd MixtureMarket::sample(std::size_t n, Rng& rng) const {
  return market_sample(spec_, n, rng);
}

// ---------------------------------------------------------------------------

std::vector<Cell> CliffSpec::default_cliff(int rows, int cols) {
  std::vector<Cell> out;
  for (int c = 1; c + 1 < cols; ++c) out.push_back({rows - 1, c});
  return out;
}

void validate_cliff(const CliffSpec& spec) {
  auto inside = [&](Cell c) {
    return c.row >= 0 && c.row < spec.rows && c.col >= 0 && c.col < spec.cols;
  };
  if (spec.rows < 1 || spec.cols < 1 || spec.rows * spec.cols < 2) {
    throw std::invalid_argument("cliff grid needs at least two cells");
  }
  if (!inside(spec.start) || !inside(spec.goal) || spec.start == spec.goal) {
    throw std::invalid_argument("cliff start/goal must be distinct grid cells");
  }
  for (const Cell& c : spec.cliff) {
    if (!inside(c)) throw std::invalid_argument("cliff cell outside grid");
    if (c == spec.start || c == spec.goal) {
      throw std::invalid_argument("start and goal must not be cliff cells");
    }
  }
  if (!(spec.slip >= 0.0 && spec.slip < 1.0)) {
    throw std::invalid_argument("slip must be in [0, 1)");
  }
  if (!(spec.gamma > 0.0 && spec.gamma < 1.0)) {
    throw std::invalid_argument("gamma must be in (0, 1)");
  }
  if (spec.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
}

CliffWalk::CliffWalk(CliffSpec spec) : spec_(std::move(spec)) {
  validate_cliff(spec_);
  cliff_.assign(static_cast<std::size_t>(num_states()), false);
  for (const Cell& c : spec_.cliff) {
    cliff_[static_cast<std::size_t>(state_of(c))] = true;
  }
}

int CliffWalk::move(int state, int action) const {
  static constexpr int dr[4] = {-1, 0, 1, 0};
  static constexpr int dc[4] = {0, 1, 0, -1};
  Cell c = cell_of(state);
  c.row = std::clamp(c.row + dr[action], 0, spec_.rows - 1);
  c.col = std::clamp(c.col + dc[action], 0, spec_.cols - 1);
  return state_of(c);
}

Trajectory CliffWalk::rollout(const TabularPolicy& policy, Rng& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> direction(0, 3);
  const int goal = state_of(spec_.goal);

  Trajectory traj;
  int s = state_of(spec_.start);
  double discount = 1.0;
  for (int t = 0; t < spec_.horizon; ++t) {
    const int a = policy.sample_action(s, rng);
    const int executed = unit(rng) < spec_.slip ? direction(rng) : a;
    const int next = move(s, executed);
    double r = 0.0;
    bool done = false;
    if (is_cliff(next)) {
      r = spec_.reward_fall;
      done = true;
    } else if (next == goal) {
      r = spec_.reward_goal;
      done = true;
    }
    traj.states.push_back(s);
    traj.actions.push_back(a);
    traj.rewards.push_back(r);
    traj.discounted_return += discount * r;
    if (done) return traj;
    discount *= spec_.gamma;
    s = next;
  }
  traj.truncated = true;
  return traj;
}

Trajectory cliff_rollout(const CliffSpec& spec, const TabularPolicy& policy,
                         Rng& rng) {
  return CliffWalk(spec).rollout(policy, rng);
}

// ---------------------------------------------------------------------------

Bandit::Bandit(std::vector<std::vector<ArmComponent>> arms)
    : arms_(std::move(arms)) {
  if (arms_.empty()) throw std::invalid_argument("bandit needs >= 1 arm");
  for (const auto& arm : arms_) {
    double total = 0.0;
    for (const auto& c : arm) {
      if (!(c.prob >= 0.0) || !(c.sd >= 0.0) || !std::isfinite(c.mean)) {
        throw std::invalid_argument("invalid bandit arm component");
      }
      total += c.prob;
    }
    if (arm.empty() || std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("bandit arm probabilities must sum to 1");
    }
  }
}

double Bandit::pull(int arm, Rng& rng) const {
  const auto& comps = arms_.at(static_cast<std::size_t>(arm));
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  const ArmComponent* chosen = &comps.back();
  for (const auto& c : comps) {
    acc += c.prob;
    if (u < acc) {
      chosen = &c;
      break;
    }
  }
  if (chosen->sd == 0.0) return chosen->mean;
  return std::normal_distribution<double>(chosen->mean, chosen->sd)(rng);
}

Trajectory Bandit::rollout(const TabularPolicy& policy, Rng& rng) const {
  Trajectory traj;
  const int a = policy.sample_action(0, rng);
  const double r = pull(a, rng);
  traj.states = {0};
  traj.actions = {a};
  traj.rewards = {r};
  traj.discounted_return = r;
  return traj;
}

void write_rollouts_csv(std::ostream& out,
                        const std::vector<Trajectory>& episodes) {
  const auto old_precision = out.precision(17);
  out << "episode,t,state,action,reward\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Trajectory& traj = episodes[e];
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
      out << e << ',' << t << ',' << traj.states[t] << ',' << traj.actions[t]
          << ',' << traj.rewards[t] << '\n';
    }
  }
  out.precision(old_precision);
}

// ---------------------------------------------------------------------------

SupervisedSpec resolve_supervised(SupervisedSpec spec) {
  if (spec.dim < 1) throw std::invalid_argument("supervised dim must be >= 1");
  if (spec.true_theta.empty()) {
    Rng rng = make_rng(spec.seed, stable_hash("true_theta"));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < spec.dim; ++i) spec.true_theta.push_back(normal(rng));
  }
  validate_supervised(spec);
  return spec;
}

void validate_supervised(const SupervisedSpec& spec) {
  if (spec.dim < 1 || spec.samples < 1) {
    throw std::invalid_argument("supervised dim and samples must be >= 1");
  }
  if (static_cast<int>(spec.true_theta.size()) != spec.dim) {
    throw std::invalid_argument("true_theta length must equal dim");
  }
  if (!(spec.noise_scale >= 0.0) || !std::isfinite(spec.noise_scale)) {
    throw std::invalid_argument("noise_scale must be finite and >= 0");
  }
}

Dataset supervised_sample(const SupervisedSpec& spec, std::size_t n,
                          Rng& rng) {
  validate_supervised(spec);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Map<const Eigen::VectorXd> theta(spec.true_theta.data(),
                                                spec.dim);
  Dataset data;
  data.features.resize(static_cast<Eigen::Index>(n), spec.dim);
  data.labels.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (int j = 0; j < spec.dim; ++j) data.features(i, j) = normal(rng);
    double noise = 0.0;
    if (spec.noise_scale > 0.0) {
      noise = spec.noise_scale * normal(rng);
      if (spec.noise == NoiseKind::HeavyTail) noise *= chi2_3_multiplier(rng);
    }
    const double response = data.features.row(i).dot(theta) + noise;
    data.labels(i) = spec.task == SupervisedKind::LinearRegression
                         ? response
                         : (response > 0.0 ? 1.0 : 0.0);
  }
  return data;
}

Dataset make_dataset(const SupervisedSpec& spec) {
  const SupervisedSpec resolved = resolve_supervised(spec);
  Rng rng = make_rng(resolved.seed, stable_hash("dataset"));
  return supervised_sample(resolved, static_cast<std::size_t>(resolved.samples), rng);
}

}  // namespace stochdom
