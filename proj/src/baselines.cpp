#include "apohf/baselines.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

#include "apohf/apohf.hpp"

namespace apohf {

ArmPair random_pair(std::size_t n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("random pair needs at least 2 arms");
  std::uniform_int_distribution<std::size_t> pick_first(0, n - 1);
  std::uniform_int_distribution<std::size_t> pick_second(0, n - 2);
  const std::size_t first = pick_first(rng);
  std::size_t second = pick_second(rng);
  if (second >= first) ++second;
  return {first, second};
}

namespace {

// Rows z_s = x_first - x_second and signs a_s.
void differences(const TrainingSet& data, Matrix& z, Vector& sign) {
  const auto n = static_cast<Eigen::Index>(data.comparisons.size());
  z.resize(n, data.inputs.cols());
  sign.resize(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Comparison& c = data.comparisons[static_cast<std::size_t>(s)];
    z.row(s) = data.inputs.row(c.first_row) - data.inputs.row(c.second_row);
    sign[s] = c.outcome == 1 ? 1.0 : -1.0;
  }
}

double loss_from(const Matrix& z, const Vector& sign, const Vector& theta, double lambda) {
  const Vector margin = sign.cwiseProduct(z * theta);
  double loss = lambda * theta.squaredNorm();
  for (Eigen::Index s = 0; s < margin.size(); ++s) loss -= log_sigmoid(margin[s]);
  return loss;
}

}  // namespace

double linear_loss(const TrainingSet& data, const Vector& theta, double lambda) {
  Matrix z;
  Vector sign;
  differences(data, z, sign);
  if (z.rows() == 0) return lambda * theta.squaredNorm();
  return loss_from(z, sign, theta, lambda);
}

Vector linear_loss_gradient(const TrainingSet& data, const Vector& theta, double lambda) {
  Matrix z;
  Vector sign;
  differences(data, z, sign);
  Vector grad = 2.0 * lambda * theta;
  if (z.rows() == 0) return grad;
  const Vector margin = sign.cwiseProduct(z * theta);
  Vector w(margin.size());
  for (Eigen::Index s = 0; s < margin.size(); ++s) w[s] = -sign[s] * sigmoid(-margin[s]);
  grad.noalias() += z.transpose() * w;
  return grad;
}

LinearDuelingState linear_fit(const TrainingSet& data, Eigen::Index dim, double lambda,
                              double nu) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  if (!data.comparisons.empty() && data.inputs.cols() != dim) {
    throw std::invalid_argument("training inputs do not match the linear model dimension");
  }
  LinearDuelingState state;
  state.lambda = lambda;
  state.nu = nu;
  state.theta_hat = Vector::Zero(dim);

  Matrix z;
  Vector sign;
  differences(data, z, sign);
  Matrix design = lambda * Matrix::Identity(dim, dim);
  if (z.rows() > 0) design.noalias() += z.transpose() * z;
  state.m_inv = design.ldlt().solve(Matrix::Identity(dim, dim));
  if (z.rows() == 0) return state;

  constexpr int kMaxIterations = 100;
  constexpr double kTolerance = 1e-8;
  Vector& theta = state.theta_hat;
  double loss = loss_from(z, sign, theta, lambda);
  state.converged = false;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Vector margin = sign.cwiseProduct(z * theta);
    Vector w(margin.size());
    Vector curvature(margin.size());
    for (Eigen::Index s = 0; s < margin.size(); ++s) {
      const double p = sigmoid(-margin[s]);
      w[s] = -sign[s] * p;
      curvature[s] = p * (1.0 - p);
    }
    Vector grad = 2.0 * lambda * theta;
    grad.noalias() += z.transpose() * w;
    if (grad.norm() < kTolerance) {
      state.converged = true;
      break;
    }
    Matrix hessian = 2.0 * lambda * Matrix::Identity(dim, dim);
    hessian.noalias() += z.transpose() * curvature.asDiagonal() * z;
    const Vector step = hessian.ldlt().solve(grad);
    // Backtracking on the convex objective.
    double t = 1.0;
    double next_loss = loss;
    Vector next;
    for (int k = 0; k < 60; ++k) {
      next = theta - t * step;
      next_loss = loss_from(z, sign, next, lambda);
      if (next_loss <= loss - 1e-4 * t * grad.dot(step)) break;
      t *= 0.5;
    }
    state.newton_iterations = it + 1;
    if (!(next_loss <= loss)) {
      // No decrease possible at double precision.
      state.converged = grad.norm() < 1e-6;
      break;
    }
    theta = next;
    loss = next_loss;
  }
  return state;
}

Vector linear_acquisition(const LinearDuelingState& state, const ArmDomain& domain,
                          std::size_t first) {
  if (first >= domain.size()) throw std::out_of_range("first arm out of range");
  const Matrix& x = domain.embeddings();
  Vector acq = x * state.theta_hat;
  if (state.nu == 0.0) return acq;
  Matrix diff = x.rowwise() - x.row(static_cast<Eigen::Index>(first));
  Matrix dm;
  dm.noalias() = diff * state.m_inv;
  const Vector width = dm.cwiseProduct(diff).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
  acq += state.nu * width;
  return acq;
}

ArmPair linear_select(LinearDuelingState& state, const ArmDomain& domain, bool exclude_first) {
  if (domain.size() < 2) throw std::invalid_argument("linear selection needs at least 2 arms");
  if (state.theta_hat.size() != domain.dim()) {
    throw std::invalid_argument("linear model dimension does not match the domain");
  }
  const Vector scores = domain.embeddings() * state.theta_hat;
  const std::size_t first = argmax_excluding(scores, std::nullopt);
  const Vector acq = linear_acquisition(state, domain, first);
  const std::size_t second =
      argmax_excluding(acq, exclude_first ? std::optional<std::size_t>(first) : std::nullopt);
  const Vector z = (domain.embeddings().row(static_cast<Eigen::Index>(first)) -
                    domain.embeddings().row(static_cast<Eigen::Index>(second)))
                       .transpose();
  const Vector u = state.m_inv * z;
  state.m_inv.noalias() -= (u / (1.0 + z.dot(u))) * u.transpose();
  return {first, second};
}

EnsembleState train_ensemble(Eigen::Index dim, const TrainingSet& data, const TrainConfig& config,
                             std::uint64_t seed, const EnsembleConfig& ensemble,
                             const std::vector<int>& widths) {
  if (ensemble.members < 1) throw std::invalid_argument("ensemble needs at least one member");
  EnsembleState state;
  state.members.reserve(ensemble.members);
  for (std::size_t k = 0; k < ensemble.members; ++k) {
    const std::uint64_t member_seed = derive_seed(seed, {tag(Stream::kInit), k});
    TrainConfig member_config = config;
    member_config.init_seed = member_seed;
    const TrainingSet* member_data = &data;
    TrainingSet resampled;
    if (ensemble.bootstrap && !data.comparisons.empty()) {
      Rng rng = make_rng(seed, {tag(Stream::kBootstrap), k});
      std::uniform_int_distribution<std::size_t> pick(0, data.comparisons.size() - 1);
      resampled.inputs = data.inputs;
      resampled.comparisons.reserve(data.comparisons.size());
      for (std::size_t i = 0; i < data.comparisons.size(); ++i) {
        resampled.comparisons.push_back(data.comparisons[pick(rng)]);
      }
      member_data = &resampled;
    }
    state.members.push_back(
        train(ScoreNet::init(dim, member_seed, widths), *member_data, member_config));
  }
  return state;
}

ThompsonPair double_ts_pair(const EnsembleState& ensemble, const ArmDomain& domain, Rng& rng,
                            bool exclude_first) {
  if (domain.size() < 2) throw std::invalid_argument("double TS needs at least 2 arms");
  if (ensemble.members.empty()) throw std::invalid_argument("empty ensemble");
  std::uniform_int_distribution<std::size_t> pick(0, ensemble.members.size() - 1);
  ThompsonPair pair{};
  pair.first_member = pick(rng);
  pair.second_member = pick(rng);
  pair.first = argmax_excluding(
      ensemble.members[pair.first_member].forward_batch(domain.embeddings()), std::nullopt);
  pair.second = argmax_excluding(
      ensemble.members[pair.second_member].forward_batch(domain.embeddings()),
      exclude_first ? std::optional<std::size_t>(pair.first) : std::nullopt);
  return pair;
}

std::size_t double_ts_report(const EnsembleState& ensemble, std::span<const std::size_t> queried,
                             const ArmDomain& domain, Rng& rng) {
  if (queried.empty()) throw std::invalid_argument("no queried arms to report from");
  if (ensemble.members.empty()) throw std::invalid_argument("empty ensemble");
  std::uniform_int_distribution<std::size_t> pick(0, ensemble.members.size() - 1);
  const ScoreNet& member = ensemble.members[pick(rng)];
  return argmax_over(member.forward_batch(domain.embeddings()), queried);
}

}  // namespace apohf
