#include "stochdom/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace stochdom {

void check_finite(const OutcomeBatch& batch) {
  if (static_cast<std::size_t>(batch.grads.rows()) != batch.size()) {
    throw std::runtime_error("outcome batch has " +
                             std::to_string(batch.grads.rows()) +
                             " gradient rows for " +
                             std::to_string(batch.size()) + " outcomes");
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (!std::isfinite(batch.values[i]) || !batch.grads.row(row).allFinite()) {
      throw std::runtime_error("non-finite outcome or gradient at index " +
                               std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
  return w / w.sum();
}

Eigen::VectorXd project_to_simplex(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double shift = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - candidate > 0.0) shift = candidate;
  }
  return (v.array() - shift).max(0.0);
}

PortfolioModel::PortfolioModel(std::shared_ptr<const ReturnSource> market,
                               SimplexMap map)
    : market_(std::move(market)), map_(map) {
  if (!market_ || market_->assets() == 0) {
    throw std::invalid_argument("portfolio needs a market with >= 1 asset");
  }
}

ParamVector PortfolioModel::initial_params() const {
  const auto k = static_cast<Eigen::Index>(dim());
  if (map_ == SimplexMap::Softmax) return ParamVector::Zero(k);
  return ParamVector::Constant(k, 1.0 / static_cast<double>(k));
}

void PortfolioModel::project(ParamVector& theta) const {
  if (map_ == SimplexMap::Projection) theta = project_to_simplex(theta);
}

Eigen::VectorXd PortfolioModel::weights(const ParamVector& theta) const {
  if (static_cast<std::size_t>(theta.size()) != dim()) {
    throw std::invalid_argument("portfolio parameter has wrong dimension");
  }
  return map_ == SimplexMap::Softmax ? softmax(theta) : Eigen::VectorXd(theta);
}

double PortfolioModel::outcome(
    const ParamVector& theta,
    const Eigen::Ref<const Eigen::VectorXd>& returns) const {
  return weights(theta).dot(returns);
}

Eigen::VectorXd PortfolioModel::jacobian_row(
    const ParamVector& theta,
    const Eigen::Ref<const Eigen::VectorXd>& returns) const {
  if (map_ == SimplexMap::Projection) return returns;
  const Eigen::VectorXd w = softmax(theta);
  const double x = w.dot(returns);
  return w.array() * (returns.array() - x);
}

OutcomeBatch PortfolioModel::evaluate(const ParamVector& theta,
                                      const Eigen::MatrixXd& returns) const {
  if (static_cast<std::size_t>(returns.cols()) != dim()) {
    throw std::invalid_argument("return matrix has wrong asset count");
  }
  const Eigen::VectorXd w = weights(theta);
  const Eigen::VectorXd x = returns * w;

  OutcomeBatch batch;
  batch.grad_mode = GradMode::Pathwise;
  batch.values.assign(x.data(), x.data() + x.size());
  if (map_ == SimplexMap::Projection) {
    batch.grads = returns;
  } else {
    // d x_i / d theta_j = w_j (r_ij - x_i)
    batch.grads = (returns.colwise() - x).array().rowwise() *
                  w.transpose().array();
  }
  check_finite(batch);
  return batch;
}

OutcomeBatch PortfolioModel::sample_outcomes(const ParamVector& theta,
                                             std::size_t n, Rng& rng) const {
  if (n == 0) throw std::invalid_argument("batch size must be >= 1");
  return evaluate(theta, market_->sample(n, rng));
}

// ---------------------------------------------------------------------------

namespace {

double parse_field(const std::string& field, std::size_t line) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
  if (end == begin || *end != '\0') {
    throw std::runtime_error("line " + std::to_string(line) +
                             ": cannot parse '" + field + "' as a number");
  }
  return value;
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Dataset read_dataset_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (rows.empty() && width == 0) {
      char* end = nullptr;
      std::strtod(fields.front().c_str(), &end);
      if (end == fields.front().c_str()) {  // header
        width = fields.size();
        continue;
      }
    }
    if (fields.size() < 2) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": need at least one feature and a label");
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected " + std::to_string(width) +
                               " columns");
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_field(f, line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("dataset has no rows");

  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(width - 1);
  data.features.resize(n, d);
  data.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) {
      data.features(i, j) = row[static_cast<std::size_t>(j)];
    }
    data.labels(i) = row.back();
  }
  return data;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const auto old_precision = out.precision(17);
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      out << data.features(i, j) << ',';
    }
    out << data.labels(i) << '\n';
  }
  out.precision(old_precision);
}

SupervisedModel::SupervisedModel(SupervisedKind kind,
                                 std::shared_ptr<const Dataset> data)
    : kind_(kind), data_(std::move(data)) {
  if (!data_ || data_->size() == 0 || data_->features.cols() == 0) {
    throw std::invalid_argument("supervised model needs a non-empty dataset");
  }
  if (data_->features.rows() != data_->labels.size()) {
    throw std::invalid_argument("features and labels differ in length");
  }
}

std::string SupervisedModel::kind() const {
  return kind_ == SupervisedKind::LinearRegression ? "linear_regression"
                                                   : "logistic_classification";
}

std::size_t SupervisedModel::dim() const {
  return static_cast<std::size_t>(data_->features.cols());
}

double SupervisedModel::outcome(
    const ParamVector& theta, const Eigen::Ref<const Eigen::VectorXd>& feature,
    double label) const {
  const double z = theta.dot(feature);
  if (kind_ == SupervisedKind::LinearRegression) {
    return -(z - label) * (z - label);
  }
  return -(softplus(z) - label * z);
}

Eigen::VectorXd SupervisedModel::jacobian_row(
    const ParamVector& theta, const Eigen::Ref<const Eigen::VectorXd>& feature,
    double label) const {
  const double z = theta.dot(feature);
  if (kind_ == SupervisedKind::LinearRegression) {
    return -2.0 * (z - label) * feature;
  }
  return -(sigmoid(z) - label) * feature;
}

OutcomeBatch SupervisedModel::evaluate(
    const ParamVector& theta, std::span<const std::size_t> rows) const {
  if (static_cast<std::size_t>(theta.size()) != dim()) {
    throw std::invalid_argument("supervised parameter has wrong dimension");
  }
  OutcomeBatch batch;
  batch.grad_mode = GradMode::Pathwise;
  batch.values.resize(rows.size());
  batch.grads.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= data_->size()) {
      throw std::out_of_range("dataset row out of range");
    }
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const Eigen::VectorXd f = data_->features.row(r).transpose();
    batch.values[i] = outcome(theta, f, data_->labels(r));
    batch.grads.row(static_cast<Eigen::Index>(i)) =
        jacobian_row(theta, f, data_->labels(r)).transpose();
  }
  check_finite(batch);
  return batch;
}

OutcomeBatch SupervisedModel::sample_outcomes(const ParamVector& theta,
                                              std::size_t n, Rng& rng) const {
  if (n == 0) throw std::invalid_argument("batch size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, data_->size() - 1);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = pick(rng);
  return evaluate(theta, rows);
}

// ---------------------------------------------------------------------------

TabularPolicy::TabularPolicy(int states, int actions)
    : TabularPolicy(states, actions,
                    ParamVector::Zero(static_cast<Eigen::Index>(states) *
                                      actions)) {}

TabularPolicy::TabularPolicy(int states, int actions, ParamVector theta)
    : states_(states), actions_(actions) {
  if (states < 1 || actions < 1) {
    throw std::invalid_argument("policy needs >= 1 state and action");
  }
  set_theta(std::move(theta));
}

void TabularPolicy::set_theta(ParamVector theta) {
  if (theta.size() != static_cast<Eigen::Index>(states_) * actions_) {
    throw std::invalid_argument("policy logits have wrong dimension");
  }
  if (!theta.allFinite()) {
    throw std::invalid_argument("policy logits must be finite");
  }
  theta_ = std::move(theta);
}

Eigen::VectorXd TabularPolicy::probs(int state) const {
  if (state < 0 || state >= states_) {
    throw std::out_of_range("policy state out of range");
  }
  return softmax(theta_.segment(static_cast<Eigen::Index>(state) * actions_,
                                actions_));
}

int TabularPolicy::sample_action(int state, Rng& rng) const {
  const Eigen::VectorXd p = probs(state);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int a = 0; a < actions_; ++a) {
    acc += p(a);
    if (u < acc) return a;
  }
  return actions_ - 1;
}

ParamVector score_row(const TabularPolicy& policy, const Trajectory& traj) {
  if (traj.states.size() != traj.actions.size()) {
    throw std::invalid_argument("trajectory states and actions differ");
  }
  const int actions = policy.num_actions();
  ParamVector row = ParamVector::Zero(static_cast<Eigen::Index>(policy.dim()));
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const auto base = static_cast<Eigen::Index>(traj.states[t]) * actions;
    row.segment(base, actions) -= policy.probs(traj.states[t]);
    row(base + traj.actions[t]) += 1.0;
  }
  return row;
}

OutcomeBatch sample_episodes(const TabularPolicy& policy,
                             const EpisodicEnv& env, std::size_t n, Rng& rng,
                             std::vector<Trajectory>* keep) {
  if (n == 0) throw std::invalid_argument("batch size must be >= 1");
  if (env.num_states() != policy.num_states() ||
      env.num_actions() != policy.num_actions()) {
    throw std::invalid_argument("policy shape does not match environment");
  }
  OutcomeBatch batch;
  batch.grad_mode = GradMode::Score;
  batch.values.resize(n);
  batch.grads.resize(static_cast<Eigen::Index>(n),
                     static_cast<Eigen::Index>(policy.dim()));
  if (keep) keep->clear();
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory traj = env.rollout(policy, rng);
    batch.values[i] = traj.discounted_return;
    batch.grads.row(static_cast<Eigen::Index>(i)) =
        score_row(policy, traj).transpose();
    if (keep) keep->push_back(std::move(traj));
  }
  check_finite(batch);
  return batch;
}

// ---------------------------------------------------------------------------

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json j;
  j["kind"] = ckpt.kind;
  j["dims"] = ckpt.dims;
  j["theta"] = std::vector<double>(ckpt.theta.data(),
                                   ckpt.theta.data() + ckpt.theta.size());
  return j.dump();
}

Checkpoint checkpoint_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.kind = j.at("kind").get<std::string>();
  ckpt.dims = j.at("dims").get<std::vector<std::size_t>>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  std::size_t expected = 1;
  for (auto d : ckpt.dims) expected *= d;
  if (ckpt.dims.empty() || expected != theta.size()) {
    throw std::runtime_error("checkpoint dims do not match theta length");
  }
  ckpt.theta = Eigen::Map<const ParamVector>(
      theta.data(), static_cast<Eigen::Index>(theta.size()));
  return ckpt;
}

}  // namespace stochdom
