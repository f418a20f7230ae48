#pragma once

// Greedy + upper-confidence-bound pair selection over a trained ScoreNet.
//
// The first arm maximizes the predicted score. The second maximizes
//   h(x) + nu * || grad h(x) - grad h(x_first) ||_{V^-1}
// where V = lambda * I + sum_s phi_s phi_s^T accumulates the gradient
// differences of previously queried pairs. All argmax ties go to the lowest
// index.

#include <cstddef>
#include <optional>
#include <span>

#include "apohf/domain.hpp"
#include "apohf/score_net.hpp"

namespace apohf {

enum class UncertaintyMode { kFull, kDiagonal };

const char* to_string(UncertaintyMode mode);
UncertaintyMode uncertainty_mode_from_string(const std::string& s);

// Dense precision matrices are used up to this input dimension when the mode
// is left unset.
inline constexpr Eigen::Index kFullMatrixMaxDim = 64;

struct PolicyConfig {
  double exploration_nu = 1.0;
  double lambda = 0.1;
  std::optional<UncertaintyMode> uncertainty_mode;
  bool exclude_first_from_second = true;

  void validate() const;
  UncertaintyMode resolved_mode(Eigen::Index input_dim) const {
    return uncertainty_mode.value_or(input_dim <= kFullMatrixMaxDim
                                         ? UncertaintyMode::kFull
                                         : UncertaintyMode::kDiagonal);
  }
};

// Inverse precision V^-1 (full mode) or the diagonal of V (diagonal mode).
class UncertaintyState {
 public:
  UncertaintyState(UncertaintyMode mode, Eigen::Index dim, double lambda);

  UncertaintyMode mode() const { return mode_; }
  Eigen::Index dim() const { return dim_; }
  double lambda() const { return lambda_; }
  std::size_t count() const { return count_; }

  // sqrt(g^T V^-1 g).
  double uncertainty(const Eigen::Ref<const Vector>& g) const;
  // uncertainty() of every row of `g`.
  Vector uncertainties(const Matrix& g) const;

  // Sherman-Morrison downdate of V^-1 (full) or v_i += phi_i^2 (diagonal).
  void absorb(const Eigen::Ref<const Vector>& phi);

  // Full mode only.
  const Matrix& inverse() const;
  // Diagonal mode only.
  const Vector& diagonal() const;

  // Order-sensitive summary used to cross-check persisted sessions.
  double digest() const;

 private:
  void check_dim(Eigen::Index n) const;

  UncertaintyMode mode_;
  Eigen::Index dim_;
  double lambda_;
  std::size_t count_ = 0;
  Matrix v_inv_;
  Vector v_diag_;
};

std::size_t select_first(const ScoreNet& net, const ArmDomain& domain);

// Acquisition value of every arm given the first arm (the first arm's own
// entry equals its plain score).
Vector acquisition_values(const ScoreNet& net, const ArmDomain& domain,
                          std::size_t first, const UncertaintyState& state, double nu);

std::size_t select_second(const ScoreNet& net, const ArmDomain& domain, std::size_t first,
                          const UncertaintyState& state, double nu,
                          bool exclude_first = true);

// Argmax of the score over `queried` only.
std::size_t report_best(const ScoreNet& net, std::span<const std::size_t> queried,
                        const ArmDomain& domain);

// Lowest-index argmax over `candidates`, or over all entries except
// `excluded`.
std::size_t argmax_over(const Vector& values, std::span<const std::size_t> candidates);
std::size_t argmax_excluding(const Vector& values, std::optional<std::size_t> excluded);

}  // namespace apohf
