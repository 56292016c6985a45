#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "stochdom/envs.hpp"
#include "stochdom/models.hpp"

using namespace stochdom;

namespace {

/// Replays one fixed return vector for every scenario.
class FixedReturns final : public ReturnSource {
 public:
  explicit FixedReturns(Eigen::VectorXd r) : r_(std::move(r)) {}
  std::size_t assets() const override { return static_cast<std::size_t>(r_.size()); }
  Eigen::MatrixXd sample(std::size_t n, Rng&) const override {
    return r_.transpose().replicate(static_cast<Eigen::Index>(n), 1);
  }

 private:
  Eigen::VectorXd r_;
};

std::shared_ptr<const ReturnSource> gaussian_market(int k, std::uint64_t seed) {
  MarketSpec spec;
  spec.assets = k;
  spec.components = 3;
  spec.seed = seed;
  return std::make_shared<MixtureMarket>(resolve_market(spec));
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace

TEST(Softmax, ShiftInvariantAndOverflowSafe) {
  Eigen::VectorXd z(3);
  z << 1000.0, 1000.0, -1000.0;
  const auto w = softmax(z);
  EXPECT_NEAR(w(0), 0.5, 1e-12);
  EXPECT_NEAR(w(2), 0.0, 1e-12);
  EXPECT_TRUE(w.allFinite());
}

TEST(ProjectToSimplex, KnownCases) {
  Eigen::VectorXd v(3);
  v << 0.2, 0.3, 0.5;
  EXPECT_TRUE(project_to_simplex(v).isApprox(v, 1e-15));
  v << 2.0, 0.0, 0.0;
  const auto p = project_to_simplex(v);
  EXPECT_DOUBLE_EQ(p(0), 1.0);
  EXPECT_DOUBLE_EQ(p(1), 0.0);
  v << 1.0, 1.0, -5.0;
  const auto q = project_to_simplex(v);
  EXPECT_NEAR(q(0), 0.5, 1e-15);
  EXPECT_NEAR(q(2), 0.0, 1e-15);
}

TEST(PortfolioModel, UniformWeightsAtZero) {
  Eigen::VectorXd r(4);
  r << 1.0, 2.0, -3.0, 4.0;
  const PortfolioModel model(std::make_shared<FixedReturns>(r));
  Rng rng = make_rng(0);
  const auto batch = model.sample_outcomes(model.initial_params(), 5, rng);
  for (double x : batch.values) EXPECT_DOUBLE_EQ(x, r.mean());
  EXPECT_EQ(batch.grad_mode, GradMode::Pathwise);
  EXPECT_EQ(batch.dim(), 4u);
}

TEST(PortfolioModel, ThreeAssetJacobianMatchesFiniteDifference) {
  Eigen::VectorXd r(3);
  r << 1.0, 0.0, -1.0;
  Eigen::VectorXd theta(3);
  theta << 1.0, 0.0, 0.0;
  const PortfolioModel model(std::make_shared<FixedReturns>(r));
  EXPECT_NEAR(model.outcome(theta, r), softmax(theta).dot(r), 1e-15);
  const auto row = model.jacobian_row(theta, r);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < 3; ++j) {
    Eigen::VectorXd up = theta, dn = theta;
    up(j) += h;
    dn(j) -= h;
    const double fd = (model.outcome(up, r) - model.outcome(dn, r)) / (2 * h);
    EXPECT_NEAR(row(j), fd, 1e-6);
  }
}

TEST(PortfolioModel, ConstantReturnsGiveZeroJacobian) {
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(5, 0.7);
  std::mt19937_64 g(1);
  for (auto map : {SimplexMap::Softmax, SimplexMap::Projection}) {
    const PortfolioModel model(std::make_shared<FixedReturns>(r), map);
    Eigen::VectorXd theta = random_vector(g, 5);
    model.project(theta);
    const auto row = model.jacobian_row(theta, r);
    if (map == SimplexMap::Softmax) {
      EXPECT_LT(row.norm(), 1e-12);
    } else {
      // Linear in w, so only moves within the simplex are meaningful.
      EXPECT_NEAR(row.sum() / 5.0, 0.7, 1e-12);
    }
  }
}

TEST(PortfolioModel, WeightsStayOnSimplex) {
  std::mt19937_64 g(2);
  const auto market = gaussian_market(6, 1);
  for (auto map : {SimplexMap::Softmax, SimplexMap::Projection}) {
    const PortfolioModel model(market, map);
    for (double scale : {1e-3, 1.0, 50.0, 1e4}) {
      Eigen::VectorXd theta = random_vector(g, 6, scale);
      model.project(theta);
      const auto w = model.weights(theta);
      EXPECT_NEAR(w.sum(), 1.0, 1e-12);
      EXPECT_GE(w.minCoeff(), 0.0);
    }
  }
}

TEST(PortfolioModel, PathwiseGradientsOnFrozenReturns) {
  std::mt19937_64 g(3);
  const auto market = gaussian_market(5, 2);
  const PortfolioModel model(market);
  Rng rng = make_rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd theta = random_vector(g, 5);
    const Eigen::MatrixXd returns = market->sample(8, rng);
    const auto batch = model.evaluate(theta, returns);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < returns.rows(); ++i) {
      for (Eigen::Index j = 0; j < 5; ++j) {
        Eigen::VectorXd up = theta, dn = theta;
        up(j) += h;
        dn(j) -= h;
        const double fd =
            (model.outcome(up, returns.row(i).transpose()) -
             model.outcome(dn, returns.row(i).transpose())) / (2 * h);
        EXPECT_LT(rel_err(batch.grads(i, j), fd), 1e-5);
      }
    }
  }
}

TEST(PortfolioModel, RejectsWrongDimension) {
  const PortfolioModel model(gaussian_market(3, 0));
  Rng rng = make_rng(0);
  EXPECT_THROW(model.sample_outcomes(Eigen::VectorXd::Zero(4), 2, rng), std::invalid_argument);
  EXPECT_THROW(model.sample_outcomes(Eigen::VectorXd::Zero(3), 0, rng), std::invalid_argument);
}

TEST(SupervisedModel, LinearOutcomeAndGradient) {
  auto data = std::make_shared<Dataset>();
  data->features = Eigen::MatrixXd(1, 2);
  data->features << 1.0, 2.0;
  data->labels = Eigen::VectorXd::Constant(1, 3.0);
  const SupervisedModel model(SupervisedKind::LinearRegression, data);
  Eigen::VectorXd theta(2);
  theta << 0.5, -1.0;
  const Eigen::VectorXd f = data->features.row(0).transpose();
  const double z = theta.dot(f);  // -1.5
  EXPECT_DOUBLE_EQ(model.outcome(theta, f, 3.0), -(z - 3.0) * (z - 3.0));
  EXPECT_TRUE(model.jacobian_row(theta, f, 3.0).isApprox(-2.0 * (z - 3.0) * f));
}

TEST(SupervisedModel, LogisticGradientMatchesFiniteDifference) {
  std::mt19937_64 g(5);
  std::bernoulli_distribution coin(0.5);
  auto data = std::make_shared<Dataset>();
  data->features = Eigen::MatrixXd::Zero(1, 4);
  data->labels = Eigen::VectorXd::Zero(1);
  const SupervisedModel model(SupervisedKind::LogisticClassification, data);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::VectorXd theta = random_vector(g, 4, 2.0);
    const Eigen::VectorXd f = random_vector(g, 4);
    const double y = coin(g) ? 1.0 : 0.0;
    const auto row = model.jacobian_row(theta, f, y);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < 4; ++j) {
      Eigen::VectorXd up = theta, dn = theta;
      up(j) += h;
      dn(j) -= h;
      const double fd = (model.outcome(up, f, y) - model.outcome(dn, f, y)) / (2 * h);
      EXPECT_NEAR(row(j), fd, 1e-6);
    }
    EXPECT_LE(model.outcome(theta, f, y), 0.0);
  }
}

TEST(SupervisedModel, MinibatchesComeFromTheDataset) {
  SupervisedSpec spec;
  spec.samples = 50;
  spec.seed = 3;
  auto data = std::make_shared<Dataset>(make_dataset(spec));
  const SupervisedModel model(SupervisedKind::LinearRegression, data);
  Rng rng = make_rng(1);
  const Eigen::VectorXd theta = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model.dim()));
  const auto batch = model.sample_outcomes(theta, 200, rng);
  std::vector<double> all(data->size());
  for (std::size_t i = 0; i < data->size(); ++i) {
    all[i] = model.outcome(theta, data->features.row(static_cast<Eigen::Index>(i)).transpose(),
                           data->labels(static_cast<Eigen::Index>(i)));
  }
  for (double x : batch.values) {
    EXPECT_NE(std::find(all.begin(), all.end(), x), all.end());
  }
  const std::vector<std::size_t> rows{0, 0, 7};
  const auto fixed = model.evaluate(theta, rows);
  EXPECT_EQ(fixed.values[0], all[0]);
  EXPECT_EQ(fixed.values[2], all[7]);
  const std::vector<std::size_t> bad{50};
  EXPECT_THROW(model.evaluate(theta, bad), std::out_of_range);
}

TEST(Dataset, CsvRoundTripAndErrors) {
  SupervisedSpec spec;
  spec.dim = 3;
  spec.samples = 10;
  const Dataset d = make_dataset(spec);
  std::stringstream buf;
  write_dataset_csv(buf, d);
  const Dataset back = read_dataset_csv(buf);
  EXPECT_TRUE(back.features.isApprox(d.features, 1e-15));
  EXPECT_TRUE(back.labels.isApprox(d.labels, 1e-15));

  std::istringstream header("x1,x2,y\n1,2,3\n4,5,6\n");
  const Dataset h = read_dataset_csv(header);
  EXPECT_EQ(h.size(), 2u);
  EXPECT_EQ(h.labels(1), 6.0);

  std::istringstream bad("1,2,3\n4,oops,6\n");
  try {
    read_dataset_csv(bad);
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  std::istringstream ragged("1,2,3\n4,5\n");
  EXPECT_THROW(read_dataset_csv(ragged), std::runtime_error);
  std::istringstream empty("");
  EXPECT_THROW(read_dataset_csv(empty), std::runtime_error);
}

TEST(TabularPolicy, ProbabilitiesAndValidation) {
  ParamVector theta = ParamVector::Zero(6);
  theta(3) = std::log(3.0);  // state 1 action 0
  const TabularPolicy pi(2, 3, theta);
  EXPECT_NEAR(pi.probs(0).sum(), 1.0, 1e-15);
  EXPECT_NEAR(pi.probs(1)(0), 0.6, 1e-12);
  EXPECT_THROW(pi.probs(2), std::out_of_range);
  EXPECT_THROW(TabularPolicy(2, 3, ParamVector::Zero(5)), std::invalid_argument);
  ParamVector nan = ParamVector::Zero(6);
  nan(0) = NAN;
  EXPECT_THROW(TabularPolicy(2, 3, nan), std::invalid_argument);
}

TEST(ScoreRow, OneStepUniformPolicy) {
  const TabularPolicy pi(3, 2);
  Trajectory traj;
  traj.states = {1};
  traj.actions = {0};
  traj.rewards = {1.0};
  const auto row = score_row(pi, traj);
  ParamVector want = ParamVector::Zero(6);
  want(2) = 0.5;
  want(3) = -0.5;
  EXPECT_TRUE(row.isApprox(want));
}

TEST(ScoreRow, ZeroMeanUnderThePolicy) {
  std::mt19937_64 g(6);
  const ParamVector theta = random_vector(g, 3);
  const TabularPolicy pi(1, 3, theta);
  const Bandit env({{{1.0, 0.0, 1.0}}, {{1.0, 1.0, 1.0}}, {{1.0, 2.0, 1.0}}});
  Rng rng = make_rng(7);
  const std::size_t n = 20000;
  const auto batch = sample_episodes(pi, env, n, rng);
  EXPECT_EQ(batch.grad_mode, GradMode::Score);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const auto col = batch.grads.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / (n - 1));
    EXPECT_LT(std::abs(m), 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST(ScoreRow, NearDeterministicPolicyHasNearZeroScore) {
  ParamVector theta = ParamVector::Zero(2);
  theta(0) = 40.0;
  const TabularPolicy pi(1, 2, theta);
  const Bandit env({{{1.0, 1.0, 0.0}}, {{1.0, 0.0, 0.0}}});
  Rng rng = make_rng(8);
  const auto batch = sample_episodes(pi, env, 100, rng);
  for (double v : batch.values) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(batch.grads.allFinite());
  EXPECT_LT(batch.grads.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SampleEpisodes, RejectsShapeMismatch) {
  const Bandit env({{{1.0, 1.0, 0.0}}, {{1.0, 0.0, 0.0}}});
  Rng rng = make_rng(0);
  EXPECT_THROW(sample_episodes(TabularPolicy(1, 3), env, 4, rng), std::invalid_argument);
  EXPECT_THROW(sample_episodes(TabularPolicy(1, 2), env, 0, rng), std::invalid_argument);
}

TEST(CheckFinite, NamesOffendingIndex) {
  OutcomeBatch b;
  b.values = {1.0, NAN};
  b.grads = Eigen::MatrixXd::Zero(2, 1);
  try {
    check_finite(b);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
  b.values = {1.0, 2.0};
  b.grads(0, 0) = INFINITY;
  EXPECT_THROW(check_finite(b), std::runtime_error);
  b.grads(0, 0) = 0.0;
  EXPECT_NO_THROW(check_finite(b));
}

TEST(Checkpoint, JsonRoundTrip) {
  Checkpoint c{"tabular_policy", {4, 2}, ParamVector::LinSpaced(8, -1.0, 1.0)};
  const auto back = checkpoint_from_json(checkpoint_to_json(c));
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.dims, c.dims);
  EXPECT_EQ(back.theta, c.theta);  // bit-exact
  EXPECT_THROW(checkpoint_from_json(R"({"kind":"x","dims":[3],"theta":[1,2]})"),
               std::runtime_error);
}
