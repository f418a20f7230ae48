#include "apohf/apohf.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace apohf {

const char* to_string(UncertaintyMode mode) {
  return mode == UncertaintyMode::kFull ? "full" : "diag";
}

UncertaintyMode uncertainty_mode_from_string(const std::string& s) {
  if (s == "full") return UncertaintyMode::kFull;
  if (s == "diag" || s == "diagonal") return UncertaintyMode::kDiagonal;
  throw std::invalid_argument("unknown uncertainty mode '" + s + "'");
}

void PolicyConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  if (!(exploration_nu >= 0.0)) throw std::invalid_argument("nu must be >= 0");
}

UncertaintyState::UncertaintyState(UncertaintyMode mode, Eigen::Index dim, double lambda)
    : mode_(mode), dim_(dim), lambda_(lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  if (dim < 1) throw std::invalid_argument("feature dimension must be >= 1");
  if (mode_ == UncertaintyMode::kFull) {
    v_inv_ = Matrix::Identity(dim, dim) / lambda;
  } else {
    v_diag_ = Vector::Constant(dim, lambda);
  }
}

void UncertaintyState::check_dim(Eigen::Index n) const {
  if (n != dim_) {
    throw std::invalid_argument("feature has dimension " + std::to_string(n) +
                                ", expected " + std::to_string(dim_));
  }
}

double UncertaintyState::uncertainty(const Eigen::Ref<const Vector>& g) const {
  check_dim(g.size());
  double q;
  if (mode_ == UncertaintyMode::kFull) {
    q = g.dot(v_inv_ * g);
  } else {
    q = (g.array().square() / v_diag_.array()).sum();
  }
  return std::sqrt(std::max(q, 0.0));
}

Vector UncertaintyState::uncertainties(const Matrix& g) const {
  check_dim(g.cols());
  Vector q;
  if (mode_ == UncertaintyMode::kFull) {
    Matrix gv;
    gv.noalias() = g * v_inv_;
    q = gv.cwiseProduct(g).rowwise().sum();
  } else {
    q = (g.array().square().rowwise() / v_diag_.transpose().array()).rowwise().sum();
  }
  return q.cwiseMax(0.0).cwiseSqrt();
}

void UncertaintyState::absorb(const Eigen::Ref<const Vector>& phi) {
  check_dim(phi.size());
  if (mode_ == UncertaintyMode::kFull) {
    const Vector u = v_inv_ * phi;
    const double denom = 1.0 + phi.dot(u);
    v_inv_.noalias() -= (u / denom) * u.transpose();
  } else {
    v_diag_.array() += phi.array().square();
  }
  ++count_;
}

const Matrix& UncertaintyState::inverse() const {
  if (mode_ != UncertaintyMode::kFull) throw std::logic_error("not a full-matrix state");
  return v_inv_;
}

const Vector& UncertaintyState::diagonal() const {
  if (mode_ != UncertaintyMode::kDiagonal) throw std::logic_error("not a diagonal state");
  return v_diag_;
}

double UncertaintyState::digest() const {
  if (mode_ == UncertaintyMode::kFull) {
    return v_inv_.sum() + v_inv_.trace();
  }
  return v_diag_.sum();
}

std::size_t argmax_over(const Vector& values, std::span<const std::size_t> candidates) {
  if (candidates.empty()) throw std::invalid_argument("no candidates");
  std::size_t best = candidates.front();
  for (std::size_t i : candidates) {
    if (values[static_cast<Eigen::Index>(i)] > values[static_cast<Eigen::Index>(best)] ||
        (values[static_cast<Eigen::Index>(i)] == values[static_cast<Eigen::Index>(best)] &&
         i < best)) {
      best = i;
    }
  }
  return best;
}

std::size_t argmax_excluding(const Vector& values, std::optional<std::size_t> excluded) {
  std::optional<std::size_t> best;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (excluded && *excluded == k) continue;
    if (!best || values[i] > values[static_cast<Eigen::Index>(*best)]) best = k;
  }
  if (!best) throw std::invalid_argument("no candidates");
  return *best;
}

std::size_t select_first(const ScoreNet& net, const ArmDomain& domain) {
  return argmax_excluding(net.forward_batch(domain.embeddings()), std::nullopt);
}

Vector acquisition_values(const ScoreNet& net, const ArmDomain& domain, std::size_t first,
                          const UncertaintyState& state, double nu) {
  if (first >= domain.size()) throw std::out_of_range("first arm out of range");
  Vector acq = net.forward_batch(domain.embeddings());
  if (nu == 0.0) return acq;
  Matrix g = net.param_gradients(domain.embeddings());
  const Vector g_first = g.row(static_cast<Eigen::Index>(first)).transpose();
  g.rowwise() -= g_first.transpose();
  acq += nu * state.uncertainties(g);
  return acq;
}

std::size_t select_second(const ScoreNet& net, const ArmDomain& domain, std::size_t first,
                          const UncertaintyState& state, double nu, bool exclude_first) {
  if (exclude_first && domain.size() < 2) {
    throw std::invalid_argument("second-arm selection needs at least 2 arms");
  }
  const Vector acq = acquisition_values(net, domain, first, state, nu);
  return argmax_excluding(acq, exclude_first ? std::optional<std::size_t>(first)
                                             : std::nullopt);
}

std::size_t report_best(const ScoreNet& net, std::span<const std::size_t> queried,
                        const ArmDomain& domain) {
  if (queried.empty()) throw std::invalid_argument("no queried arms to report from");
  for (std::size_t i : queried) {
    if (i >= domain.size()) throw std::out_of_range("queried arm out of range");
  }
  return argmax_over(net.forward_batch(domain.embeddings()), queried);
}

}  // namespace apohf
