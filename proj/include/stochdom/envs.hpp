#pragma once

// Synthetic data sources: a heavy-tailed Gaussian-mixture market, a slippery
// cliff-walking gridworld, a bandit, and a synthetic supervised task.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stochdom/models.hpp"
#include "stochdom/rng.hpp"

namespace stochdom {

// ---------------------------------------------------------------------------
// Market

/// Mixture of M Gaussians over K assets. Component j has center means[j] and
/// covariance factors[j] * factors[j]^T (factors may be K x r for any r).
/// With heavy_tail set, each draw's deviation from its center is multiplied
/// by an independent chi^2_3 / 3 variable.
struct MarketSpec {
  int assets = 100;
  int components = 20;
  std::uint64_t seed = 0;
  bool heavy_tail = true;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> factors;

  /// True when means/factors were supplied rather than generated.
  bool explicit_components = false;
};

/// Fills means ~ N(0, 1) and covariance F F^T + 0.01 I with F_ij ~ N(0, 1/K)
/// from spec.seed, unless components are already present.
MarketSpec resolve_market(MarketSpec spec);
void validate_market(const MarketSpec& spec);

/// One-component Gaussian market R = means + loading * z, z ~ N(0, I).
MarketSpec gaussian_factor_market(Eigen::VectorXd means,
                                  Eigen::MatrixXd loading);

Eigen::MatrixXd market_sample(const MarketSpec& spec, std::size_t n, Rng& rng);

class MixtureMarket final : public ReturnSource {
 public:
  explicit MixtureMarket(MarketSpec spec);
  std::size_t assets() const override;
  Eigen::MatrixXd sample(std::size_t n, Rng& rng) const override;
  const MarketSpec& spec() const { return spec_; }

 private:
  MarketSpec spec_;
};

double chi2_3_multiplier(Rng& rng);

// ---------------------------------------------------------------------------
// CliffWalking

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

/// Actions: 0 up, 1 right, 2 down, 3 left. State index is row * cols + col.
struct CliffSpec {
  int rows = 4;
  int cols = 6;
  Cell start{3, 0};
  Cell goal{3, 5};
  std::vector<Cell> cliff = default_cliff(4, 6);
  double slip = 0.03;
  double gamma = 0.95;
  double reward_fall = -1.0;
  double reward_goal = 1.0;
  int horizon = 200;

  /// Bottom-row interior cells.
  static std::vector<Cell> default_cliff(int rows, int cols);
};

void validate_cliff(const CliffSpec& spec);

class CliffWalk final : public EpisodicEnv {
 public:
  explicit CliffWalk(CliffSpec spec);

  int num_states() const override { return spec_.rows * spec_.cols; }
  int num_actions() const override { return 4; }
  Trajectory rollout(const TabularPolicy& policy, Rng& rng) const override;

  const CliffSpec& spec() const { return spec_; }
  int state_of(Cell c) const { return c.row * spec_.cols + c.col; }
  Cell cell_of(int state) const { return {state / spec_.cols, state % spec_.cols}; }
  bool is_cliff(int state) const { return cliff_[static_cast<std::size_t>(state)]; }
  /// Deterministic successor of `state` under `action` (borders clamp).
  int move(int state, int action) const;

 private:
  CliffSpec spec_;
  std::vector<bool> cliff_;
};

Trajectory cliff_rollout(const CliffSpec& spec, const TabularPolicy& policy,
                         Rng& rng);

// ---------------------------------------------------------------------------
// Bandit

struct ArmComponent {
  double prob = 1.0;
  double mean = 0.0;
  double sd = 0.0;
};

/// Single-state environment; each episode pulls one arm and ends. An arm's
/// reward is a finite mixture of Gaussians.
class Bandit final : public EpisodicEnv {
 public:
  explicit Bandit(std::vector<std::vector<ArmComponent>> arms);

  int num_states() const override { return 1; }
  int num_actions() const override { return static_cast<int>(arms_.size()); }
  Trajectory rollout(const TabularPolicy& policy, Rng& rng) const override;

  double pull(int arm, Rng& rng) const;

 private:
  std::vector<std::vector<ArmComponent>> arms_;
};

/// CSV `episode,t,state,action,reward`.
void write_rollouts_csv(std::ostream& out,
                        const std::vector<Trajectory>& episodes);

// ---------------------------------------------------------------------------
// Supervised

enum class NoiseKind { Gaussian, HeavyTail };

struct SupervisedSpec {
  int dim = 5;
  int samples = 2000;
  NoiseKind noise = NoiseKind::Gaussian;
  double noise_scale = 0.5;
  SupervisedKind task = SupervisedKind::LinearRegression;
  std::vector<double> true_theta;  // drawn N(0,1) from seed when empty
  std::uint64_t seed = 0;
};

SupervisedSpec resolve_supervised(SupervisedSpec spec);
void validate_supervised(const SupervisedSpec& spec);

/// Features ~ N(0, I). Regression labels are theta.f + noise; classification
/// labels are 1{theta.f + noise > 0}. Heavy-tail noise is a Gaussian scaled
/// by chi^2_3 / 3.
Dataset supervised_sample(const SupervisedSpec& spec, std::size_t n, Rng& rng);

/// The fixed training set of `spec.samples` rows, regenerated from the seed.
/// Resolves `spec` first.
Dataset make_dataset(const SupervisedSpec& spec);

}  // namespace stochdom
