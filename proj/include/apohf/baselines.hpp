#pragma once

// Comparison policies: uniform random pairs, linear dueling bandits and
// double Thompson sampling over a deep ensemble.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "apohf/domain.hpp"
#include "apohf/random.hpp"
#include "apohf/score_net.hpp"

namespace apohf {

using ArmPair = std::pair<std::size_t, std::size_t>;

// Two distinct indices drawn uniformly from [0, n).
ArmPair random_pair(std::size_t n, Rng& rng);

// Regularized logistic MLE of a linear utility theta^T x on pair differences,
// plus the inverse design matrix (lambda I + sum z z^T)^-1.
struct LinearDuelingState {
  Vector theta_hat;
  Matrix m_inv;
  double lambda = 0.1;
  double nu = 1.0;
  int newton_iterations = 0;
  bool converged = true;
};

// Damped Newton on sum_s softplus(-a_s theta^T z_s) + lambda |theta|^2, with
// a_s = +1 for outcome 1 and -1 otherwise. Stops at gradient norm < 1e-8 or
// after 100 iterations (then converged = false).
LinearDuelingState linear_fit(const TrainingSet& data, Eigen::Index dim, double lambda,
                              double nu);

// Loss and gradient of the objective minimized by linear_fit.
double linear_loss(const TrainingSet& data, const Vector& theta, double lambda);
Vector linear_loss_gradient(const TrainingSet& data, const Vector& theta, double lambda);

// first = argmax theta^T x; second = argmax theta^T x + nu |x - x_first|_{M^-1}
// over the remaining arms. Folds z = x_first - x_second into m_inv.
ArmPair linear_select(LinearDuelingState& state, const ArmDomain& domain,
                      bool exclude_first = true);

// Second-arm acquisition values for the linear model (first arm's entry is its
// plain score).
Vector linear_acquisition(const LinearDuelingState& state, const ArmDomain& domain,
                          std::size_t first);

inline constexpr std::size_t kEnsembleSize = 10;

struct EnsembleConfig {
  std::size_t members = kEnsembleSize;
  // Resample comparisons with replacement per member.
  bool bootstrap = false;
};

struct EnsembleState {
  std::vector<ScoreNet> members;
};

// Re-initializes every member from its own seed and trains it on `data`.
EnsembleState train_ensemble(Eigen::Index dim, const TrainingSet& data,
                             const TrainConfig& config, std::uint64_t seed,
                             const EnsembleConfig& ensemble = {},
                             const std::vector<int>& widths = default_widths());

struct ThompsonPair {
  std::size_t first;
  std::size_t second;
  std::size_t first_member;
  std::size_t second_member;
};

ThompsonPair double_ts_pair(const EnsembleState& ensemble, const ArmDomain& domain, Rng& rng,
                            bool exclude_first = true);

// Samples one member and returns its argmax over `queried`.
std::size_t double_ts_report(const EnsembleState& ensemble,
                             std::span<const std::size_t> queried, const ArmDomain& domain,
                             Rng& rng);

}  // namespace apohf
