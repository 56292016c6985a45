#pragma once

// Parameterized stochastic outcomes X_theta with per-sample gradients.
//
// Two gradient transports are offered. Pathwise models (portfolio,
// supervised) draw randomness that does not depend on theta, so each outcome
// x_i(theta) is differentiated directly. Score models (tabular policies)
// return the log-likelihood gradient of each sampled trajectory instead.

#include <Eigen/Core>

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stochdom/rng.hpp"

namespace stochdom {

using ParamVector = Eigen::VectorXd;

enum class GradMode { Pathwise, Score };

/// N realizations of X_theta with one gradient row per realization.
struct OutcomeBatch {
  std::vector<double> values;
  GradMode grad_mode = GradMode::Pathwise;
  Eigen::MatrixXd grads;  // N x d

  std::size_t size() const { return values.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(grads.cols()); }
};

/// Throws std::runtime_error naming the first non-finite value or gradient row.
void check_finite(const OutcomeBatch& batch);

// ---------------------------------------------------------------------------
// Sources of randomness (implemented in envs.hpp)

/// Draws joint asset returns, one row per scenario.
class ReturnSource {
 public:
  virtual ~ReturnSource() = default;
  virtual std::size_t assets() const = 0;
  virtual Eigen::MatrixXd sample(std::size_t n, Rng& rng) const = 0;
};

struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;  // the action the policy chose, before any slip
  std::vector<double> rewards;
  double discounted_return = 0.0;
  bool truncated = false;
};

class TabularPolicy;

class EpisodicEnv {
 public:
  virtual ~EpisodicEnv() = default;
  virtual int num_states() const = 0;
  virtual int num_actions() const = 0;
  virtual Trajectory rollout(const TabularPolicy& policy, Rng& rng) const = 0;
};

// ---------------------------------------------------------------------------
// Pathwise models

class PathwiseModel {
 public:
  virtual ~PathwiseModel() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual ParamVector initial_params() const {
    return ParamVector::Zero(static_cast<Eigen::Index>(dim()));
  }
  /// Draws a fresh realization and evaluates values and Jacobian rows on it.
  virtual OutcomeBatch sample_outcomes(const ParamVector& theta, std::size_t n,
                                       Rng& rng) const = 0;
  /// Maps theta back onto the feasible set after an update (identity here).
  virtual void project(ParamVector& /*theta*/) const {}
};

enum class SimplexMap { Softmax, Projection };

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);
/// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_to_simplex(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Total return X = w(theta) . R of a long-only portfolio.
class PortfolioModel final : public PathwiseModel {
 public:
  explicit PortfolioModel(std::shared_ptr<const ReturnSource> market,
                          SimplexMap map = SimplexMap::Softmax);

  std::string kind() const override { return "portfolio"; }
  std::size_t dim() const override { return market_->assets(); }
  ParamVector initial_params() const override;
  OutcomeBatch sample_outcomes(const ParamVector& theta, std::size_t n,
                               Rng& rng) const override;
  void project(ParamVector& theta) const override;

  SimplexMap simplex_map() const { return map_; }
  Eigen::VectorXd weights(const ParamVector& theta) const;
  double outcome(const ParamVector& theta,
                 const Eigen::Ref<const Eigen::VectorXd>& returns) const;
  Eigen::VectorXd jacobian_row(
      const ParamVector& theta,
      const Eigen::Ref<const Eigen::VectorXd>& returns) const;
  /// Values and Jacobian rows on a frozen return matrix (N x K).
  OutcomeBatch evaluate(const ParamVector& theta,
                        const Eigen::MatrixXd& returns) const;

 private:
  std::shared_ptr<const ReturnSource> market_;
  SimplexMap map_;
};

struct Dataset {
  Eigen::MatrixXd features;  // n x d
  Eigen::VectorXd labels;    // n

  std::size_t size() const { return static_cast<std::size_t>(labels.size()); }
};

/// CSV, one row per example, last column is the label. A header row is
/// skipped when its first field is not numeric.
Dataset read_dataset_csv(std::istream& in);
void write_dataset_csv(std::ostream& out, const Dataset& data);

enum class SupervisedKind { LinearRegression, LogisticClassification };

/// Outcome x = -loss(f_theta(feature), label) on minibatches drawn with
/// replacement from a fixed dataset.
class SupervisedModel final : public PathwiseModel {
 public:
  SupervisedModel(SupervisedKind kind, std::shared_ptr<const Dataset> data);

  std::string kind() const override;
  std::size_t dim() const override;
  OutcomeBatch sample_outcomes(const ParamVector& theta, std::size_t n,
                               Rng& rng) const override;

  SupervisedKind loss_kind() const { return kind_; }
  double outcome(const ParamVector& theta,
                 const Eigen::Ref<const Eigen::VectorXd>& feature,
                 double label) const;
  Eigen::VectorXd jacobian_row(const ParamVector& theta,
                               const Eigen::Ref<const Eigen::VectorXd>& feature,
                               double label) const;
  OutcomeBatch evaluate(const ParamVector& theta,
                        std::span<const std::size_t> rows) const;

 private:
  SupervisedKind kind_;
  std::shared_ptr<const Dataset> data_;
};

// ---------------------------------------------------------------------------
// Score models

/// Softmax policy with one logit per (state, action), stored at s * A + a.
class TabularPolicy {
 public:
  TabularPolicy(int states, int actions);
  TabularPolicy(int states, int actions, ParamVector theta);

  int num_states() const { return states_; }
  int num_actions() const { return actions_; }
  std::size_t dim() const { return static_cast<std::size_t>(theta_.size()); }
  const ParamVector& theta() const { return theta_; }
  void set_theta(ParamVector theta);

  Eigen::VectorXd probs(int state) const;
  int sample_action(int state, Rng& rng) const;

 private:
  int states_;
  int actions_;
  ParamVector theta_;
};

/// sum_t grad log pi(a_t | s_t) for one trajectory.
ParamVector score_row(const TabularPolicy& policy, const Trajectory& traj);

/// N episodes: values are discounted returns, grads are score rows.
OutcomeBatch sample_episodes(const TabularPolicy& policy,
                             const EpisodicEnv& env, std::size_t n, Rng& rng,
                             std::vector<Trajectory>* keep = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: {"kind": ..., "dims": [...], "theta": [...]}

struct Checkpoint {
  std::string kind;
  std::vector<std::size_t> dims;
  ParamVector theta;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(std::string_view text);

}  // namespace stochdom
